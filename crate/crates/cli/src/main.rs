fn main() {
    std::process::exit(sigfuse_cli::run(std::env::args_os()));
}
