fn main() {
    std::process::exit(sparsefuse_cli::run(std::env::args_os()));
}
