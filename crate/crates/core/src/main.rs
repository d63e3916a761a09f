fn main() {
    std::process::exit(physio_bench::cli::main());
}
