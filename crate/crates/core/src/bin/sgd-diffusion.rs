fn main() {
    std::process::exit(sgd_diffusion::cli::main_with_args(std::env::args_os()));
}
