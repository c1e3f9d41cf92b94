fn main() {
    std::process::exit(occupancy_opc::cli::main_from_args(std::env::args_os()));
}
