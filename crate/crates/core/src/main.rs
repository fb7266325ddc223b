fn main() {
    std::process::exit(featmeta::cli::run(std::env::args_os()));
}
