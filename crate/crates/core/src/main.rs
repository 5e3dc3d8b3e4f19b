//! Command-line front end for the benchmark harness.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags or
//! config files), 1 for runtime failures.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use specprune::corpus::Scheme;
use specprune::gather::GatherMode;
use specprune::harness::{
    cmd_ablate, cmd_bench, cmd_coverage, cmd_sizing, cmd_sweep_wmax, ExperimentConfig,
    ModelFamily,
};
use specprune::metrics::OverlapMode;
use specprune::policy::PolicyMode;
use specprune::synth::{self, SynthConfig};
use specprune::{Error, Result};

#[derive(Parser)]
#[command(
    name = "specprune",
    version,
    about = "Speculative decoding with a context-pruned draft vocabulary: benchmark harness"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Benchmark the policy modes on a corpus and write per-mode reports.
    Bench {
        #[command(flatten)]
        exp: Box<ExpArgs>,
        /// Output directory for reports and traces.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep the dynamic policy's recency window.
    SweepWmax {
        #[command(flatten)]
        exp: Box<ExpArgs>,
        /// Window sizes, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        windows: Vec<usize>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the candidate stream's sources: prompt-only, updates-only, both.
    Ablate {
        #[command(flatten)]
        exp: Box<ExpArgs>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage versus vocabulary budget for static and dynamic policies.
    Coverage {
        #[command(flatten)]
        exp: Box<ExpArgs>,
        /// Vocabulary budgets, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print buffer-footprint arithmetic for a model geometry as JSON.
    Sizing {
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        wmax: usize,
        #[arg(long)]
        dim: usize,
        /// Bytes per weight element in the repack buffer.
        #[arg(long, default_value_t = 2)]
        bytes_per_element: usize,
    },
    /// Generate a seeded synthetic corpus (one document per line).
    GenCorpus {
        #[arg(long, default_value_t = SynthConfig::default().docs)]
        docs: usize,
        #[arg(long, default_value_t = SynthConfig::default().words_per_doc)]
        words_per_doc: usize,
        #[arg(long, default_value_t = SynthConfig::default().topics)]
        topics: usize,
        #[arg(long, default_value_t = SynthConfig::default().topic_words)]
        topic_words: usize,
        #[arg(long, default_value_t = SynthConfig::default().function_words)]
        function_words: usize,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
        /// Output text path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Experiment flags shared by the corpus-driven subcommands. Every flag
/// overrides the matching field of `--config` (or of the defaults).
#[derive(Args)]
struct ExpArgs {
    /// Corpus text file, one document per line.
    #[arg(long)]
    corpus: PathBuf,
    /// JSON experiment config to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tokenization scheme: word or byte.
    #[arg(long)]
    scheme: Option<String>,
    /// Model family: count or linear.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Policy modes to bench, comma-separated.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    /// Static policy's vocabulary budget.
    #[arg(long)]
    k_static: Option<usize>,
    /// Per-position prompt candidates seeding the stream.
    #[arg(long)]
    k_pre: Option<usize>,
    /// Verifier candidates appended per round.
    #[arg(long)]
    k_ver: Option<usize>,
    /// Recency window (max active-set size) of the windowed policies.
    #[arg(long = "wmax")]
    window: Option<usize>,
    /// Draft tree depth.
    #[arg(long)]
    depth: Option<usize>,
    /// Children per expanded node.
    #[arg(long)]
    width: Option<usize>,
    /// Cap on draft tokens per round.
    #[arg(long = "max-draft")]
    max_draft_tokens: Option<usize>,
    /// Draft tokens per head call (latency model only).
    #[arg(long)]
    batch: Option<usize>,
    /// Gather plan: full or delta.
    #[arg(long)]
    gather: Option<String>,
    /// Gather overlap in the latency model: sync or async.
    #[arg(long)]
    overlap: Option<String>,
    /// Hidden dimension of the linear family.
    #[arg(long)]
    dim: Option<usize>,
    /// Prompt spans to decode.
    #[arg(long)]
    prompts: Option<usize>,
    /// Tokens per prompt span.
    #[arg(long)]
    prompt_len: Option<usize>,
    /// New tokens decoded per prompt.
    #[arg(long)]
    max_new: Option<usize>,
}

impl ExpArgs {
    fn to_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("config file: {e}")))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.scheme {
            cfg.scheme = Scheme::parse(s)?;
        }
        if let Some(s) = &self.family {
            cfg.family = ModelFamily::parse(s)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(names) = &self.modes {
            cfg.modes = names
                .iter()
                .map(|s| PolicyMode::parse(s))
                .collect::<Result<_>>()?;
        }
        if let Some(v) = self.k_static {
            cfg.k_static = v;
        }
        if let Some(v) = self.k_pre {
            cfg.k_pre = v;
        }
        if let Some(v) = self.k_ver {
            cfg.k_ver = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.max_draft_tokens {
            cfg.max_draft_tokens = v;
        }
        if let Some(v) = self.batch {
            cfg.batch = v;
        }
        if let Some(s) = &self.gather {
            cfg.gather = GatherMode::parse(s)?;
        }
        if let Some(s) = &self.overlap {
            cfg.overlap = OverlapMode::parse(s)?;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.prompts {
            cfg.prompts = v;
        }
        if let Some(v) = self.prompt_len {
            cfg.prompt_len = v;
        }
        if let Some(v) = self.max_new {
            cfg.max_new = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn corpus_text(&self) -> Result<String> {
        Ok(fs::read_to_string(&self.corpus)?)
    }
}

/// File writer, or stdout when no path was given.
fn sink(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Bench { exp, out } => {
            let cfg = exp.to_config()?;
            let summary = cmd_bench(&cfg, &exp.corpus_text()?, &out)?;
            println!(
                "corpus: {} tokens, vocabulary {}",
                summary.corpus_tokens, summary.vocab_size
            );
            println!("{:<9} {:>8} {:>9} {:>10}", "mode", "alpha", "coverage", "tok/ms");
            for r in &summary.rows {
                println!(
                    "{:<9} {:>8.3} {:>9.3} {:>10.3}",
                    r.mode, r.alpha, r.coverage, r.sim_speed
                );
            }
            println!("reports written to {}", out.display());
        }
        Cmd::SweepWmax { exp, windows, out } => {
            let cfg = exp.to_config()?;
            let mut w = sink(&out)?;
            cmd_sweep_wmax(&cfg, &exp.corpus_text()?, &windows, &mut w)?;
            w.flush()?;
        }
        Cmd::Ablate { exp, out } => {
            let cfg = exp.to_config()?;
            let mut w = sink(&out)?;
            cmd_ablate(&cfg, &exp.corpus_text()?, &mut w)?;
            w.flush()?;
        }
        Cmd::Coverage { exp, sizes, out } => {
            let cfg = exp.to_config()?;
            let mut w = sink(&out)?;
            cmd_coverage(&cfg, &exp.corpus_text()?, &sizes, &mut w)?;
            w.flush()?;
        }
        Cmd::Sizing {
            vocab_size,
            wmax,
            dim,
            bytes_per_element,
        } => {
            if vocab_size == 0 || wmax == 0 || dim == 0 || bytes_per_element == 0 {
                return Err(Error::InvalidConfig(
                    "sizing arguments must all be >= 1".into(),
                ));
            }
            cmd_sizing(vocab_size, wmax, dim, bytes_per_element, std::io::stdout().lock())?;
        }
        Cmd::GenCorpus {
            docs,
            words_per_doc,
            topics,
            topic_words,
            function_words,
            seed,
            out,
        } => {
            let cfg = SynthConfig {
                docs,
                words_per_doc,
                topics,
                topic_words,
                function_words,
                seed,
            };
            let text = synth::generate(&cfg)?;
            let mut w = sink(&out)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_config() { 2 } else { 1 });
    }
}
