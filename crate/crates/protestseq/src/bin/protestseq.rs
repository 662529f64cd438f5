fn main() -> std::process::ExitCode {
    protestseq::cli::main_entry()
}
