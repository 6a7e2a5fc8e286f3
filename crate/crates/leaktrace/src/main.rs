fn main() {
    std::process::exit(leaktrace::cli::main(std::env::args_os()));
}
