fn main() {
    std::process::exit(cgcl::cli::main_with_args(std::env::args_os()));
}
