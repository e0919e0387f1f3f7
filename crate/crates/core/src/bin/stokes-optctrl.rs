fn main() {
    std::process::exit(stokes_optctrl::cli::main_with_args(std::env::args_os()));
}
