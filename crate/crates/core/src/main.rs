use clap::{Parser, Subcommand};

use nametag::cli::{cmd_eval, cmd_lda, cmd_stats, cmd_tag, cmd_train, CliOpts};

/// Name tagger with document- and corpus-level attention over retrieved
/// supporting sentences.
#[derive(Parser)]
#[command(name = "nametag", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a tagger: baseline pretraining, then attention fine-tuning
    Train(CliOpts),
    /// Tag a CoNLL file with a trained checkpoint
    Tag(CliOpts),
    /// Score a tagged file (word gold predicted columns)
    Eval(CliOpts),
    /// Mention statistics: repeat rate and type consistency
    Stats(CliOpts),
    /// Cluster documents by topic and print assignments as TSV
    Lda(CliOpts),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Train(o) => cmd_train(o),
        Cmd::Tag(o) => cmd_tag(o),
        Cmd::Eval(o) => cmd_eval(o),
        Cmd::Stats(o) => cmd_stats(o),
        Cmd::Lda(o) => cmd_lda(o),
    };
    if let Err(e) = result {
        if let nametag::Error::Io(ioe) = &e {
            if ioe.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
