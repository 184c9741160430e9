fn main() {
    std::process::exit(simtune::cli::main_with_args(std::env::args_os()));
}
