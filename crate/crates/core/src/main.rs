fn main() {
    let code = fcl_core::cli::run(std::env::args_os());
    std::process::exit(code);
}
