fn main() {
    std::process::exit(qutrit_bsm::cli::main_with(std::env::args_os()));
}
