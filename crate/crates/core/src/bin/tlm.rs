fn main() {
    tlm_core::cli::init_logging();
    std::process::exit(tlm_core::cli::main_with_args(std::env::args_os()));
}
