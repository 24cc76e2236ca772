use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fmap::backend::DcfParams;
use fmap::dsp::AugmentSpec;
use fmap::pipeline::{
    cmd_augment, cmd_backend, cmd_embed, cmd_eval, cmd_fbank, cmd_map, cmd_prepare, cmd_score,
    cmd_synth_toy, cmd_train, FbankOpts, PipelineError, ScoreOpts, ToyCorpusSpec,
};
use fmap::training::TrainConfig;

#[derive(Parser)]
#[command(name = "fmap", about = "feature-domain adaptation pipeline", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TrainConfigArgs {
    /// `key = value` training config file; defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainConfigArgs {
    fn load(&self) -> Result<TrainConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic two-domain corpus
    SynthToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        speakers: usize,
        #[arg(long, default_value_t = 10)]
        utts: usize,
        #[arg(long, default_value_t = 3.0)]
        seconds: f64,
    },
    /// Resample, optionally SNR-filter, and concatenate by session
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8000)]
        rate: u32,
        /// keep only the top half of files by WADA-SNR
        #[arg(long)]
        snr_filter: bool,
    },
    /// Add foreground noise (and optional RIRs) to a corpus
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long)]
        rir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        snr_lo: f64,
        #[arg(long, default_value_t = 15.0)]
        snr_hi: f64,
    },
    /// Log-mel features with energy VAD and sliding CMN
    Fbank {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        n_mels: usize,
        #[arg(long, default_value_t = 0.0)]
        vad_offset: f64,
        /// sliding CMN window in frames; 0 disables CMN
        #[arg(long, default_value_t = 300)]
        cmn_window: usize,
    },
    /// Train the CycleGAN on two unpaired feature directories
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainConfigArgs,
    },
    /// Map target-domain features to the source domain (G_{T->S})
    Map {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainConfigArgs,
    },
    /// Stats-pooling embeddings for a feature directory
    Embed {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit LDA + PLDA on labeled embeddings
    Backend {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// LDA output dimension; 0 disables LDA
        #[arg(long, default_value_t = 0)]
        lda_dim: usize,
    },
    /// Score a trial list, optionally with adaptive S-norm
    Score {
        #[arg(long)]
        backend: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        top_k: usize,
    },
    /// EER / minDCF for a score file against its trial list
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        p_target: f64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn run(cmd: Cmd) -> Result<(), PipelineError> {
    match cmd {
        Cmd::SynthToy {
            out,
            seed,
            speakers,
            utts,
            seconds,
        } => cmd_synth_toy(
            &ToyCorpusSpec {
                n_speakers: speakers,
                utts_per_speaker: utts,
                utt_seconds: seconds,
                seed,
                ..ToyCorpusSpec::default()
            },
            &out,
        ),
        Cmd::Prepare {
            manifest,
            out,
            rate,
            snr_filter,
        } => cmd_prepare(&manifest, &out, rate, snr_filter).map(|_| ()),
        Cmd::Augment {
            manifest,
            noise,
            rir,
            out,
            seed,
            snr_lo,
            snr_hi,
        } => cmd_augment(
            &manifest,
            &noise,
            rir.as_deref(),
            &out,
            &AugmentSpec {
                snr_lo_db: snr_lo,
                snr_hi_db: snr_hi,
                ..AugmentSpec::default()
            },
            seed,
        )
        .map(|_| ()),
        Cmd::Fbank {
            manifest,
            out,
            n_mels,
            vad_offset,
            cmn_window,
        } => cmd_fbank(
            &manifest,
            &out,
            &FbankOpts {
                n_mels,
                vad_offset,
                cmn_window,
            },
        ),
        Cmd::Train {
            source,
            target,
            out,
            train,
        } => cmd_train(&source, &target, &out, &train.load()?),
        Cmd::Map {
            features,
            checkpoint,
            out,
            train,
        } => cmd_map(&features, &checkpoint, &train.load()?, &out),
        Cmd::Embed { features, out } => cmd_embed(&features, &out),
        Cmd::Backend {
            embeddings,
            manifest,
            out,
            lda_dim,
        } => cmd_backend(
            &embeddings,
            &manifest,
            &out,
            if lda_dim == 0 { None } else { Some(lda_dim) },
        ),
        Cmd::Score {
            backend,
            enroll,
            test,
            trials,
            out,
            cohort,
            top_k,
        } => cmd_score(
            &backend,
            &enroll,
            &test,
            &trials,
            &out,
            &ScoreOpts { cohort, top_k },
        ),
        Cmd::Eval {
            scores,
            trials,
            p_target,
            report,
        } => cmd_eval(
            &scores,
            &trials,
            &DcfParams {
                p_target,
                ..DcfParams::default()
            },
            report.as_deref(),
        )
        .map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
