use clap::Parser;

fn main() {
    let cli = match window_topk_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are configuration errors; 2 is reserved for bad data.
            std::process::exit(if e.use_stderr() { window_topk_cli::EXIT_CONFIG } else { 0 });
        }
    };
    if let Err(e) = window_topk_cli::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}
