fn main() {
    std::process::exit(monogcn::cli::run(std::env::args_os()));
}
