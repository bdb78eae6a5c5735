fn main() {
    std::process::exit(snrlab_cli::main_with_args(std::env::args_os()));
}
