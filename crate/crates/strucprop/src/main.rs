fn main() -> std::process::ExitCode {
    strucprop::cli::run(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr())
}
