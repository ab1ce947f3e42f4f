//! `tabkit classical|deep --model_type <name> --dataset <name> [...]`

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{ArgAction, Args, Parser, Subcommand};
use tabkit::encode_cat::CatPolicy;
use tabkit::encode_num::NumPolicy;
use tabkit::methods::Family;
use tabkit::preprocess::{CatNanPolicy, Normalization, NumNanPolicy};

#[derive(Debug, Parser)]
#[command(name = "tabkit", version, about = "Train and evaluate tabular learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classical and tree-based learners.
    Classical(RunArgs),
    /// Neural learners.
    Deep(RunArgs),
}

fn tokens<T: Copy + 'static>(all: &'static [T], token: fn(T) -> &'static str) -> PossibleValuesParser {
    PossibleValuesParser::new(all.iter().map(|&t| token(t)))
}

fn parse<T: std::str::FromStr>(s: &str) -> T
where
    T::Err: std::fmt::Debug,
{
    s.parse().expect("token validated by clap")
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Registered method name, e.g. knn, gbdt, mlp
    #[arg(long = "model_type")]
    pub model_type: String,

    /// Dataset directory name under --dataset_path
    #[arg(long)]
    pub dataset: String,

    /// Root directory holding datasets
    #[arg(long = "dataset_path", env = "TALENT_DATA", default_value = "./data")]
    pub dataset_path: PathBuf,

    /// Maximum training epochs for iterative learners [method default: 200]
    #[arg(long = "max_epoch")]
    pub max_epoch: Option<usize>,

    /// Mini-batch size for iterative learners [method default: 256]
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,

    /// Number of seeds; runs seeds 0..seed_num
    #[arg(long = "seed_num", default_value_t = 15)]
    pub seed_num: u64,

    #[arg(long, default_value = "standard",
          value_parser = tokens(Normalization::ALL, Normalization::token).map(|s: String| parse::<Normalization>(&s)))]
    pub normalization: Normalization,

    #[arg(long = "num_nan_policy", default_value = "mean",
          value_parser = tokens(NumNanPolicy::ALL, NumNanPolicy::token).map(|s: String| parse::<NumNanPolicy>(&s)))]
    pub num_nan_policy: NumNanPolicy,

    #[arg(long = "cat_nan_policy", default_value = "most_frequent",
          value_parser = tokens(CatNanPolicy::ALL, CatNanPolicy::token).map(|s: String| parse::<CatNanPolicy>(&s)))]
    pub cat_nan_policy: CatNanPolicy,

    #[arg(long = "cat_policy", default_value = "onehot",
          value_parser = tokens(CatPolicy::ALL, CatPolicy::token).map(|s: String| parse::<CatPolicy>(&s)))]
    pub cat_policy: CatPolicy,

    #[arg(long = "num_policy", default_value = "none",
          value_parser = tokens(NumPolicy::ALL, NumPolicy::token).map(|s: String| parse::<NumPolicy>(&s)))]
    pub num_policy: NumPolicy,

    /// Random-search trials when --tune is set
    #[arg(long = "n_trials", default_value_t = 100)]
    pub n_trials: usize,

    /// Tune hyperparameters before the seed loop
    #[arg(long, default_value = "False", action = ArgAction::Set,
          value_parser = PossibleValuesParser::new(["True", "False", "true", "false"]).map(|s: String| s.eq_ignore_ascii_case("true")))]
    pub tune: bool,

    /// Directory receiving results.csv, ranks.csv and rank_vs_time.svg
    #[arg(long = "output_dir", default_value = "./results")]
    pub output_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (family, args) = match cli.command {
        Command::Classical(a) => (Family::Classical, a),
        Command::Deep(a) => (Family::Deep, a),
    };
    match run::execute(family, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
