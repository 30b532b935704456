fn main() {
    // Not locked: progress lines come from worker threads.
    let code = permlab::cli::main_with(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
