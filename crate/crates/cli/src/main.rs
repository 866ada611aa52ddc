fn main() {
    std::process::exit(augex_cli::main_with(std::env::args_os()));
}
