mod config;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use melscribe::align::{refine_alignment, AlignmentMap, BeatGrid};
use melscribe::eval::{octave_invariant_f1, transcript_from_json, transcript_to_json, ONSET_TOLERANCE_S};
use melscribe::features::{
    beatwise_resample, concat_features, load_features, logmel, read_wav, save_features, write_wav_f32, FeatureMatrix,
    ResampledFeatures,
};
use melscribe::htparse::{convert_functional, stratified_split};
use melscribe::labeler::{
    decode, decode_chords, decode_onsets, densify_chords, densify_score, load_checkpoint, predict, save_checkpoint,
    train, Checkpoint, LogitSequence, Task, TrainingExample,
};
use melscribe::leadsheet::{assemble, emit_lilypond, emit_midi, ks_key, legato_score};
use melscribe::synth::{synth_dataset, SynthConfig};
use melscribe::types::{ChordEvent, ChordSymbol, Meter, Pitch, Segment, Split};
use rayon::prelude::*;
use serde_json::json;

use config::{RunConfig, Scale};

#[derive(Parser)]
#[command(name = "melscribe", version, about = "Beat-synchronous melody transcription and lead sheets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert functional annotations and assign splits.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Beat-grid alignment.
    #[command(subcommand)]
    Align(AlignCmd),
    /// Feature extraction and beat-wise resampling.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Train a labeler from a run configuration.
    Train(TrainArgs),
    /// Transcribe the melody of one recording.
    Transcribe(TranscribeArgs),
    /// Octave-invariant note F1 between two transcripts.
    Evaluate(EvaluateArgs),
    /// Transcribe melody and chords and engrave a lead sheet.
    Leadsheet(LeadsheetArgs),
    /// Write a synthetic dataset (segments, audio, beat grids).
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Convert every `*.json` functional annotation in a directory.
    Convert {
        functional_dir: PathBuf,
        out_dir: PathBuf,
        /// Worker threads; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Assign artist-stratified 8:1:1 splits, rewriting the segment files in place.
    Split {
        dataset_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Segment id → artist map; defaults to `<dataset_dir>/artists.json`.
        #[arg(long)]
        artists: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AlignCmd {
    /// Snap a segment to its beat grid and write the alignment map.
    Refine {
        segment: PathBuf,
        beatgrid: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Log-mel spectrogram of a WAV file, or of every WAV file in a directory.
    Mel {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Pool a time-rate matrix to one row per sixteenth note of an alignment.
    Resample { input: PathBuf, alignment: PathBuf, output: PathBuf },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long)]
    scale: Option<Scale>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
}

/// Which stretch of the beat grid to transcribe.
#[derive(Args)]
struct Span {
    /// Approximate start time; the nearest downbeat is used.
    #[arg(long, default_value_t = 0.0)]
    start: f64,
    /// Number of beats; defaults to as many as the grid and features allow.
    #[arg(long)]
    beats: Option<usize>,
}

#[derive(Args)]
struct TranscribeArgs {
    /// WAV audio (log-mel features are computed) or an SSFT feature file.
    input: PathBuf,
    beatgrid: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    span: Span,
    /// Overrides the checkpoint's decoding threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// Transcript path; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    midi: Option<PathBuf>,
    #[arg(long, default_value = "4/4")]
    meter: Meter,
}

#[derive(Args)]
struct EvaluateArgs {
    estimate: PathBuf,
    reference: PathBuf,
    #[arg(long, default_value_t = ONSET_TOLERANCE_S)]
    tolerance: f64,
}

#[derive(Args)]
struct LeadsheetArgs {
    input: PathBuf,
    beatgrid: PathBuf,
    #[arg(long)]
    melody_ckpt: PathBuf,
    #[arg(long)]
    chord_ckpt: Option<PathBuf>,
    #[arg(long, default_value = "4/4")]
    meter: Meter,
    #[command(flatten)]
    span: Span,
    /// LilyPond output; included in the JSON summary when absent.
    #[arg(long)]
    ly: Option<PathBuf>,
    #[arg(long)]
    midi: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    beats: usize,
    #[arg(long)]
    chords: bool,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "melody" => Ok(Task::Melody),
        "chords" => Ok(Task::Chords),
        _ => Err(format!("unknown task `{s}` (melody or chords)")),
    }
}

/// A required input that does not exist; exits with status 2.
#[derive(Debug)]
struct MissingInput(PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing input: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

fn require(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(MissingInput(path.to_path_buf()).into());
    }
    Ok(())
}

fn exit_status(e: &anyhow::Error) -> u8 {
    let not_found = |io: &std::io::Error| io.kind() == std::io::ErrorKind::NotFound;
    let missing = e.chain().any(|c| {
        c.is::<MissingInput>()
            || c.downcast_ref::<std::io::Error>().is_some_and(not_found)
            || matches!(c.downcast_ref::<melscribe::Error>(), Some(melscribe::Error::Io(io)) if not_found(io))
    });
    if missing {
        2
    } else {
        1
    }
}

fn read_text(path: &Path) -> Result<String> {
    require(path)?;
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    Ok(pool.install(f))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    require(dir)?;
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

const ARTISTS_FILE: &str = "artists.json";

fn load_segments(dir: &Path) -> Result<Vec<(PathBuf, Segment)>> {
    files_with_ext(dir, "json")?
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != ARTISTS_FILE))
        .map(|p| {
            let seg = Segment::from_json(&read_text(&p)?).with_context(|| format!("parsing {}", p.display()))?;
            Ok((p, seg))
        })
        .collect()
}

/// Sidecar or feature file for a recording: the audio reference with its extension replaced.
fn sidecar(dir: &Path, audio_ref: &str, ext: &str) -> PathBuf {
    dir.join(Path::new(audio_ref).with_extension(ext))
}

fn dataset_convert(functional_dir: &Path, out_dir: &Path, jobs: usize) -> Result<()> {
    let files = files_with_ext(functional_dir, "json")?;
    let results = with_jobs(jobs, || {
        files
            .par_iter()
            .map(|p| std::fs::read(p).map_err(anyhow::Error::from).and_then(|b| Ok(convert_functional(&b)?)))
            .collect::<Vec<_>>()
    })?;
    std::fs::create_dir_all(out_dir)?;
    let mut artists = BTreeMap::new();
    let (mut rejects, mut warnings) = (Vec::new(), Vec::new());
    let mut converted = 0;
    for (path, result) in files.iter().zip(results) {
        let file = path.file_name().unwrap().to_string_lossy().to_string();
        let conv = match result {
            Ok(c) => c,
            Err(e) => {
                rejects.push(json!({"file": file, "reason": e.to_string()}));
                continue;
            }
        };
        let id = conv.segment.id.clone();
        if id.is_empty() || id.contains(['/', '\\']) || id == "artists" {
            rejects.push(json!({"file": file, "reason": format!("segment id `{id}` is not usable as a file name")}));
            continue;
        }
        if artists.contains_key(&id) {
            rejects.push(json!({"file": file, "reason": format!("duplicate segment id `{id}`")}));
            continue;
        }
        for w in &conv.warnings {
            warnings.push(json!({"id": id, "warning": w}));
        }
        write_text(&out_dir.join(format!("{id}.json")), &conv.segment.to_json()?)?;
        match conv.artist {
            Some(a) => artists.insert(id, Some(a)),
            None => {
                warnings.push(json!({"id": id, "warning": "no artist; cannot be split"}));
                artists.insert(id, None)
            }
        };
        converted += 1;
    }
    let known: BTreeMap<&String, &String> = artists.iter().filter_map(|(k, v)| v.as_ref().map(|a| (k, a))).collect();
    write_text(&out_dir.join(ARTISTS_FILE), &serde_json::to_string_pretty(&known)?)?;
    for r in &rejects {
        eprintln!("rejected {}: {}", r["file"].as_str().unwrap_or(""), r["reason"].as_str().unwrap_or(""));
    }
    print_json(&json!({"converted": converted, "rejected": rejects.len(), "rejects": rejects, "warnings": warnings}))
}

fn dataset_split(dir: &Path, seed: u64, artists: Option<PathBuf>) -> Result<()> {
    let artists_path = artists.unwrap_or_else(|| dir.join(ARTISTS_FILE));
    let artist_of: HashMap<String, String> = serde_json::from_str(&read_text(&artists_path)?)
        .with_context(|| format!("parsing {}", artists_path.display()))?;
    let loaded = load_segments(dir)?;
    let segments: Vec<Segment> = loaded.iter().map(|(_, s)| s.clone()).collect();
    let assigned = stratified_split(&segments, &artist_of, [8, 1, 1], seed)?;
    let mut counts = BTreeMap::new();
    for ((path, _), seg) in loaded.iter().zip(&assigned) {
        write_text(path, &seg.to_json()?)?;
        *counts.entry(format!("{:?}", seg.split.expect("assigned")).to_lowercase()).or_insert(0usize) += 1;
    }
    print_json(&json!({"segments": assigned.len(), "splits": counts}))
}

fn align_refine(segment: &Path, beatgrid: &Path, out: Option<PathBuf>) -> Result<()> {
    let seg = Segment::from_json(&read_text(segment)?)?;
    let grid = BeatGrid::from_json(&read_text(beatgrid)?)?;
    let map = refine_alignment(&grid, seg.user_start_s, seg.num_beats())?;
    match out {
        Some(p) => {
            write_text(&p, &map.to_json()?)?;
            print_json(&json!({"beats": map.num_beats(), "start_s": map.start_s(), "end_s": map.end_s()}))
        }
        None => {
            println!("{}", map.to_json()?);
            Ok(())
        }
    }
}

fn mel_file(input: &Path, output: &Path) -> Result<FeatureMatrix> {
    let audio = read_wav(input).with_context(|| format!("reading {}", input.display()))?;
    let m = logmel(&audio)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_features(output, &m)?;
    Ok(m)
}

fn features_mel(input: &Path, output: &Path, jobs: usize) -> Result<()> {
    require(input)?;
    if !input.is_dir() {
        let m = mel_file(input, output)?;
        return print_json(&json!({"frames": m.num_frames(), "dim": m.dim(), "rate_hz": m.rate_hz()}));
    }
    let wavs = files_with_ext(input, "wav")?;
    std::fs::create_dir_all(output)?;
    let results = with_jobs(jobs, || {
        wavs.par_iter()
            .map(|w| mel_file(w, &output.join(w.with_extension("ssft").file_name().unwrap())).map(|m| m.num_frames()))
            .collect::<Vec<_>>()
    })?;
    let mut failures = Vec::new();
    for (w, r) in wavs.iter().zip(results) {
        if let Err(e) = r {
            failures.push(json!({"file": w.display().to_string(), "reason": format!("{e:#}")}));
        }
    }
    print_json(&json!({"written": wavs.len() - failures.len(), "failed": failures}))?;
    if !failures.is_empty() {
        bail!("{} file(s) failed", failures.len());
    }
    Ok(())
}

fn features_resample(input: &Path, alignment: &Path, output: &Path) -> Result<()> {
    require(input)?;
    let map = AlignmentMap::from_json(&read_text(alignment)?)?;
    let x = load_features(input)?;
    let r = beatwise_resample(&x, &map)?;
    save_features(output, &r.to_feature_matrix()?)?;
    print_json(&json!({"ticks": r.ticks(), "dim": r.dim()}))
}

fn build_example(cfg: &RunConfig, seg: &Segment) -> Result<TrainingExample> {
    let split = seg.split.with_context(|| format!("segment `{}` has no split; run `dataset split`", seg.id))?;
    let grid = BeatGrid::from_json(&read_text(&sidecar(&cfg.beatgrid_dir, &seg.audio_ref, "json"))?)?;
    let b = seg.num_beats();
    let map = refine_alignment(&grid, seg.user_start_s, b)?;
    let parts = cfg
        .features
        .dirs()
        .iter()
        .map(|d| {
            let path = sidecar(d, &seg.audio_ref, "ssft");
            require(&path)?;
            Ok(beatwise_resample(&load_features(&path)?, &map)?)
        })
        .collect::<Result<Vec<ResampledFeatures>>>()?;
    let labels = match cfg.task {
        Task::Melody => densify_score(&seg.melody, b)?,
        Task::Chords => densify_chords(&seg.chords, b)?,
    };
    Ok(TrainingExample::new(seg.id.clone(), concat_features(&parts)?, labels, map, split)?)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let mut cfg: RunConfig = serde_json::from_str(&read_text(&args.config)?)
        .with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.checkpoint {
        cfg.checkpoint = v;
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = Some(v);
    }
    if let Some(v) = args.task {
        cfg.task = v;
    }
    if let Some(v) = args.scale {
        cfg.model.scale = v;
    }
    let t = &mut cfg.train;
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.eval_every = args.eval_every.unwrap_or(t.eval_every);
    t.patience = args.patience.unwrap_or(t.patience);
    t.max_steps = args.max_steps.unwrap_or(t.max_steps);
    for dir in cfg.input_dirs() {
        require(&dir)?;
    }

    let segments = load_segments(&cfg.dataset_dir)?;
    let examples = segments
        .par_iter()
        .map(|(path, seg)| build_example(&cfg, seg).with_context(|| format!("preparing {}", path.display())))
        .collect::<Result<Vec<_>>>()?;
    let input_dim = examples.first().map_or(0, |e| e.features.dim());
    let labeler = cfg.model.labeler(input_dim, cfg.task, cfg.seed);
    eprintln!("training on {} segments, {input_dim} feature dims", examples.len());
    let outcome = train(&labeler, &cfg.train, &examples)?;
    for point in &outcome.history {
        eprintln!("{}", serde_json::to_string(point)?);
    }
    let ck = Checkpoint {
        config: labeler,
        params: outcome.params,
        threshold: outcome.threshold,
        steps: outcome.steps as u64,
    };
    if let Some(dir) = cfg.checkpoint.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_checkpoint(&cfg.checkpoint, &ck)?;
    if let Some(dir) = &cfg.output_dir {
        write_text(&dir.join("history.json"), &serde_json::to_string_pretty(&outcome.history)?)?;
        write_text(&dir.join("run.json"), &serde_json::to_string_pretty(&cfg)?)?;
    }
    print_json(&json!({
        "checkpoint": cfg.checkpoint.display().to_string(),
        "threshold": outcome.threshold,
        "best_valid_f1": outcome.best_f1,
        "best_step": outcome.best_step,
        "steps": outcome.steps,
        "evaluations": outcome.history.len(),
    }))
}

fn input_features(path: &Path) -> Result<FeatureMatrix> {
    require(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        Ok(logmel(&read_wav(path)?)?)
    } else {
        Ok(load_features(path)?)
    }
}

/// Alignment for a span of the grid. Without an explicit beat count, the longest span that the
/// grid and the features both cover.
fn span_map(grid: &BeatGrid, span: &Span, x: &FeatureMatrix) -> Result<AlignmentMap> {
    if let Some(b) = span.beats {
        return Ok(refine_alignment(grid, span.start, b)?);
    }
    let available = match refine_alignment(grid, span.start, grid.beat_times_s().len()) {
        Ok(map) => map.num_beats(),
        Err(melscribe::Error::InsufficientBeats { available, .. }) => available + 1,
        Err(e) => return Err(e.into()),
    };
    for b in (1..=available).rev() {
        let map = refine_alignment(grid, span.start, b)?;
        if map.end_s() <= x.end_s() {
            return Ok(map);
        }
    }
    bail!("features end at {:.3} s, before the first beat span", x.end_s())
}

fn logits_for(ck: &Checkpoint, pooled: &ResampledFeatures) -> Result<LogitSequence> {
    if pooled.dim() != ck.config.input_dim {
        bail!("features have {} dims, checkpoint expects {}", pooled.dim(), ck.config.input_dim);
    }
    Ok(predict(&ck.config, &ck.params, pooled.frames().view())?)
}

fn load_ckpt(path: &Path, task: Task) -> Result<Checkpoint> {
    require(path)?;
    let ck = load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
    if ck.config.task != task {
        bail!("{} is a {:?} checkpoint, expected {:?}", path.display(), ck.config.task, task);
    }
    Ok(ck)
}

fn melody_score(logits: &LogitSequence, tau: f64, ticks: usize) -> Result<melscribe::types::ScoreMelody> {
    let onsets = decode_onsets(logits, tau)
        .into_iter()
        .map(|(t, c)| Ok((t as u32, Pitch::from_class_index(c)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(legato_score(&onsets, ticks as u32)?)
}

fn chord_events(chords: &[(u32, ChordSymbol)], ticks: u32) -> Vec<ChordEvent> {
    chords
        .iter()
        .enumerate()
        .map(|(i, &(t, chord))| {
            let end = chords.get(i + 1).map_or(ticks, |c| c.0);
            ChordEvent { onset_ticks: t, duration_ticks: end - t, chord }
        })
        .collect()
}

fn run_transcribe(args: TranscribeArgs) -> Result<()> {
    let ck = load_ckpt(&args.checkpoint, Task::Melody)?;
    let grid = BeatGrid::from_json(&read_text(&args.beatgrid)?)?;
    let x = input_features(&args.input)?;
    let map = span_map(&grid, &args.span, &x)?;
    let pooled = beatwise_resample(&x, &map)?;
    let logits = logits_for(&ck, &pooled)?;
    let tau = args.threshold.unwrap_or(ck.threshold);
    let melody = decode(&logits, tau, &map)?;
    let text = transcript_to_json(&melody)?;
    if let Some(path) = &args.midi {
        let score = melody_score(&logits, tau, map.num_ticks())?;
        let key = ks_key(&score, &[])?;
        let sheet = assemble(score, Vec::new(), key, args.meter, &map)?;
        std::fs::write(path, emit_midi(&sheet, &map)?)?;
    }
    match &args.out {
        Some(p) => {
            write_text(p, &text)?;
            print_json(&json!({"notes": melody.len(), "beats": map.num_beats(), "threshold": tau}))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let est = transcript_from_json(&read_text(&args.estimate)?)
        .with_context(|| format!("parsing {}", args.estimate.display()))?;
    let reference = transcript_from_json(&read_text(&args.reference)?)
        .with_context(|| format!("parsing {}", args.reference.display()))?;
    if !(args.tolerance >= 0.0) {
        bail!("tolerance must be non-negative");
    }
    print_json(&serde_json::to_value(octave_invariant_f1(&est, &reference, args.tolerance))?)
}

fn run_leadsheet(args: LeadsheetArgs) -> Result<()> {
    let melody_ck = load_ckpt(&args.melody_ckpt, Task::Melody)?;
    let chord_ck = args.chord_ckpt.as_deref().map(|p| load_ckpt(p, Task::Chords)).transpose()?;
    let grid = BeatGrid::from_json(&read_text(&args.beatgrid)?)?;
    let x = input_features(&args.input)?;
    let map = span_map(&grid, &args.span, &x)?;
    let pooled = beatwise_resample(&x, &map)?;
    let ticks = map.num_ticks();
    let melody = melody_score(&logits_for(&melody_ck, &pooled)?, melody_ck.threshold, ticks)?;
    let chords = match &chord_ck {
        Some(ck) => decode_chords(&logits_for(ck, &pooled)?, ck.threshold)?,
        None => Vec::new(),
    };
    let key = ks_key(&melody, &chord_events(&chords, ticks as u32))?;
    let (n_notes, n_chords) = (melody.len(), chords.len());
    let sheet = assemble(melody, chords, key, args.meter, &map)?;
    let ly = emit_lilypond(&sheet)?;
    let midi = emit_midi(&sheet, &map)?;
    if let Some(p) = &args.midi {
        std::fs::write(p, &midi).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut summary = json!({
        "key": key.to_string(),
        "tempo_bpm": sheet.tempo_bpm,
        "beats": map.num_beats(),
        "notes": n_notes,
        "chords": n_chords,
    });
    match &args.ly {
        Some(p) => write_text(p, &ly)?,
        None => summary["lilypond"] = json!(ly),
    }
    print_json(&summary)
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig { beats: args.beats, with_chords: args.chords, ..SynthConfig::default() };
    if args.beats == 0 {
        bail!("--beats must be positive");
    }
    let items = synth_dataset(args.count, args.seed, &cfg)?;
    let (seg_dir, audio_dir, grid_dir) =
        (args.out_dir.join("segments"), args.out_dir.join("audio"), args.out_dir.join("beatgrids"));
    for d in [&seg_dir, &audio_dir, &grid_dir] {
        std::fs::create_dir_all(d)?;
    }
    items.par_iter().try_for_each(|s| -> Result<()> {
        let seg = &s.segment;
        write_text(&seg_dir.join(format!("{}.json", seg.id)), &seg.to_json()?)?;
        write_wav_f32(audio_dir.join(&seg.audio_ref), &s.audio)?;
        write_text(&sidecar(&grid_dir, &seg.audio_ref, "json"), &serde_json::to_string(&s.grid.to_file())?)?;
        Ok(())
    })?;
    let artists: BTreeMap<&str, &str> = items.iter().map(|s| (s.segment.id.as_str(), s.artist.as_str())).collect();
    write_text(&seg_dir.join(ARTISTS_FILE), &serde_json::to_string_pretty(&artists)?)?;
    let count = |split| items.iter().filter(|s| s.segment.split == Some(split)).count();
    print_json(&json!({
        "segments": items.len(),
        "train": count(Split::Train),
        "valid": count(Split::Valid),
        "test": count(Split::Test),
    }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset(DatasetCmd::Convert { functional_dir, out_dir, jobs }) => {
            dataset_convert(&functional_dir, &out_dir, jobs)
        }
        Command::Dataset(DatasetCmd::Split { dataset_dir, seed, artists }) => dataset_split(&dataset_dir, seed, artists),
        Command::Align(AlignCmd::Refine { segment, beatgrid, out }) => align_refine(&segment, &beatgrid, out),
        Command::Features(FeaturesCmd::Mel { input, output, jobs }) => features_mel(&input, &output, jobs),
        Command::Features(FeaturesCmd::Resample { input, alignment, output }) => {
            features_resample(&input, &alignment, &output)
        }
        Command::Train(args) => run_train(args),
        Command::Transcribe(args) => run_transcribe(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Leadsheet(args) => run_leadsheet(args),
        Command::Synth(args) => run_synth(args),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
