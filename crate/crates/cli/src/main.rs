fn main() {
    std::process::exit(kmpc::cli::main_exit_code());
}
