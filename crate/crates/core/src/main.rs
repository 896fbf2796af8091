fn main() {
    let code = prm_forge::cli::main_with_args(std::env::args_os(), |k| std::env::var(k).ok());
    std::process::exit(code);
}
