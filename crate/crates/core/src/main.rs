fn main() {
    std::process::exit(noisycf::cli::run(std::env::args_os()));
}
