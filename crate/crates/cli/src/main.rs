fn main() {
    std::process::exit(phaseflow_cli::main_with_args(std::env::args_os()));
}
