//! Subcommand arguments (doubling as the recorded run config) and their
//! execution.

use std::f64::consts::SQRT_2;
use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use bilip_core::estimators::{
    bias_limit_check, refine_extreme, sample_pairs, sampled_bilip, spectral_upper, sqrt2_certificate,
    BiLipBracket, Direction, Sqrt2Certificate, BIAS_LIMIT_ALPHA,
};
use bilip_core::exact::{
    brute_force_bilip, enumerate_cells, exact_upper_lipschitz, related_bounds, MAX_EXACT_COLS,
    MAX_EXACT_ROWS,
};
use bilip_core::lab::{
    angle_preservation_check, beta_sweep, chi_mean, epsilon_net_sphere, expectation_identity_check,
    gaussian_width_mc, mc_lemma_checks, rip_check, small_distance_profile_at, theorem_band_check,
    ConeKind, ConeSpec, ExperimentConfig, ExperimentReport,
};
use bilip_core::{LayerMap, Matrix, RngSeed};

use crate::matrix_io::read_matrix_file;
use crate::report::{experiment_records, Record};
use crate::CliError;

/// Pinned window for `beta_lo` once `m / n >= 1000`.
pub const SWEEP_BETA_WINDOW: (f64, f64) = (1.35, 1.55);
/// Allowed rise of `beta_lo` from the smallest to the largest `m`.
pub const SWEEP_TREND_SLACK: f64 = 0.02;
/// Pinned factor window for the sparse-cone width against `sqrt(2k ln(n/k))`.
pub const SPARSE_WIDTH_FACTORS: (f64, f64) = (1.0, 3.0);
/// Pairs used by the bias-limit record of `analyze`.
const BIAS_LIMIT_PAIRS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Exact analysis (small layers), sampled bracket and certificate for a matrix file.
    Analyze(AnalyzeArgs),
    /// The sqrt(2) lower-bound certificate for a matrix file.
    Certify(CertifyArgs),
    /// beta_lo and certificate for Gaussian layers of increasing width.
    Sweep(SweepArgs),
    /// Monte-Carlo checks of the Gaussian expectation lemmas and identity.
    Lemmas(LemmasArgs),
    /// Concentration band of the normalised squared output distance.
    Band(BandArgs),
    /// Squared ratio as the two inputs approach each other.
    Small(SmallArgs),
    /// Post-activation angle against its prediction.
    Angle(AngleArgs),
    /// Restricted isometry of the Gaussian matrix on cone differences.
    Rip(RipArgs),
    /// Monte-Carlo Gaussian width of a cone.
    Width(WidthArgs),
    /// Greedy epsilon-net of the unit sphere.
    Net(NetArgs),
    /// Re-run the config block of an earlier report.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// Matrix file: "m n" header, then m rows of n reals.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Bias vector as m comma-separated values (zero when omitted).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub bias: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: u64,
    /// Probes for the certificate.
    #[arg(long, default_value_t = 256)]
    pub probes: usize,
    /// Grid resolution of the brute-force oracle (n <= 2 only).
    #[arg(long, default_value_t = 1024)]
    pub resolution: usize,
    /// Coordinate-search iterations applied to the sampled extremes.
    #[arg(long, default_value_t = 40)]
    pub refine: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CertifyArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub probes: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Strictly increasing comma-separated widths.
    #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LemmasArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    /// Gaussian rows per pair.
    #[arg(long, default_value_t = 1_000_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 10)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10.0)]
    pub beta: f64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BandArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 20_000)]
    pub m: usize,
    #[arg(long, default_value_t = 100_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Regime threshold on ||x - y|| / max(||x||, ||y||).
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// full, sparse:K or halfspaces:FILE.
    #[arg(long, default_value = "full")]
    pub cone: String,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SmallArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 5000)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Comma-separated relative offsets ||x - y|| / ||x||.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
    pub eps: Vec<f64>,
    #[arg(long, default_value = "full")]
    pub cone: String,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct AngleArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 20_000)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub pairs: usize,
    #[arg(long, default_value = "full")]
    pub cone: String,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RipArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 5000)]
    pub m: usize,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    #[arg(long, default_value = "full")]
    pub cone: String,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WidthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "full")]
    pub cone: String,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct NetArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 10_000)]
    pub probes: usize,
    /// Also emit one record per net point.
    #[arg(long)]
    pub points: bool,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReplayArgs {
    /// A JSON or CSV report, or a bare config object.
    #[arg(long)]
    pub config: PathBuf,
}

/// Records produced by a command and the verdict of its acceptance check.
pub struct Outcome {
    pub records: Vec<Record>,
    pub check_passed: bool,
    pub warnings: Vec<String>,
}

fn parse_cone(spec: &str, n: usize) -> Result<ConeSpec, CliError> {
    let cone = if spec == "full" {
        ConeSpec::full(n)
    } else if let Some(k) = spec.strip_prefix("sparse:") {
        let k = k
            .parse()
            .map_err(|_| CliError::Usage(format!("invalid sparsity in --cone {spec}")))?;
        ConeSpec::sparse(n, k)
    } else if let Some(path) = spec.strip_prefix("halfspaces:") {
        let h = read_matrix_file(path.as_ref())?;
        if h.cols() != n {
            return Err(CliError::Usage(format!("cone normals have {} columns, expected n = {n}", h.cols())));
        }
        ConeSpec::halfspaces(h.row_iter().map(<[f64]>::to_vec).collect())?
    } else {
        return Err(CliError::Usage(format!(
            "unknown cone '{spec}': expected full, sparse:K or halfspaces:FILE"
        )));
    };
    cone.validate()?;
    Ok(cone)
}

fn experiment(n: usize, m: usize, pairs: usize, seed: u64, cone: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::new(n, m, seed);
    cfg.pair_count = pairs;
    cfg.cone = parse_cone(cone, n)?;
    Ok(cfg)
}

fn from_report(report: ExperimentReport) -> Outcome {
    Outcome {
        records: experiment_records(&report),
        check_passed: report.passed(),
        warnings: report.warnings,
    }
}

pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Certify(a) => certify(a),
        Command::Sweep(a) => sweep(a),
        Command::Lemmas(a) => lemmas(a),
        Command::Band(a) => {
            let mut cfg = experiment(a.n, a.m, a.pairs, a.seed, &a.cone)?;
            cfg.delta = a.delta;
            cfg.c = a.c;
            Ok(from_report(theorem_band_check(&cfg)?))
        }
        Command::Small(a) => {
            let cfg = experiment(a.n, a.m, a.pairs, a.seed, &a.cone)?;
            Ok(from_report(small_distance_profile_at(&cfg, &a.eps)?))
        }
        Command::Angle(a) => {
            let cfg = experiment(a.n, a.m, a.pairs, a.seed, &a.cone)?;
            Ok(from_report(angle_preservation_check(&cfg)?))
        }
        Command::Rip(a) => {
            let mut cfg = experiment(a.n, a.m, a.pairs, a.seed, &a.cone)?;
            cfg.delta = a.delta;
            Ok(from_report(rip_check(&cfg)?))
        }
        Command::Width(a) => width(a),
        Command::Net(a) => net(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

fn bracket_record(kind: &str, b: &BiLipBracket) -> Record {
    let mut r = Record::new(kind)
        .num("u_lo", b.u_lo)
        .num("l_hi", b.l_hi)
        .opt("u_hi", b.u_hi)
        .opt("l_lo", b.l_lo)
        .num("beta_lo", b.beta_lo)
        .opt("beta_hi", b.beta_hi())
        .flag("collapsed", b.collapsed)
        .int("sample_count", b.sample_count)
        .int("degenerate_skipped", b.degenerate_skipped);
    if let Some(w) = &b.u_witness {
        r = r.list("u_witness_x", &w.x).list("u_witness_y", &w.y);
    }
    if let Some(w) = &b.l_witness {
        r = r.list("l_witness_x", &w.x).list("l_witness_y", &w.y);
    }
    r
}

fn certificate_record(c: &Sqrt2Certificate) -> Record {
    Record::new("certificate")
        .list("probe", &c.probe)
        .num("r_plus", c.r_plus)
        .num("r_minus", c.r_minus)
        .num("u_lb", c.u_lb)
        .num("l_ub", c.l_ub)
        .num("cert_ratio", c.cert_ratio)
        .int("probe_count", c.probe_count)
        .flag("passed", cert_ok(c))
}

fn cert_ok(c: &Sqrt2Certificate) -> bool {
    c.cert_ratio >= SQRT_2 - 1e-9
}

fn analyze(args: &AnalyzeArgs) -> Result<Outcome, CliError> {
    let a = read_matrix_file(&args.matrix)?;
    let (m, n) = (a.rows(), a.cols());
    let bias = args.bias.clone().unwrap_or_else(|| vec![0.0; m]);
    let layer = LayerMap::new(a.clone(), bias)?;
    let unbiased = !layer.has_bias();
    let seed = RngSeed::new(args.seed);
    let mut records = vec![Record::new("layer")
        .int("m", m)
        .int("n", n)
        .flag("has_bias", !unbiased)
        .num("spectral_upper", spectral_upper(&a))];
    let mut warnings = Vec::new();
    let mut ok = true;

    let exact_ok = unbiased && n <= MAX_EXACT_COLS && m <= MAX_EXACT_ROWS;
    let mut u_exact = None;
    let mut l_theory = None;
    if exact_ok {
        let cells = enumerate_cells(&a)?;
        let bounds = related_bounds(&a)?;
        let u = exact_upper_lipschitz(&a)?;
        for w in &bounds.warnings {
            warnings.push(format!("arrangement: {w:?}"));
        }
        u_exact = Some(u);
        l_theory = if bounds.has_empty_cell {
            Some(0.0)
        } else if bounds.lambda_a > 0.0 {
            Some(bounds.l_lower_reading1)
        } else {
            None
        };
        records.push(
            Record::new("bounds")
                .int("cell_count", cells.patterns.len())
                .num("lambda_max", bounds.lambda_max)
                .num("lambda_a", bounds.lambda_a)
                .num("u_exact", u)
                .num("l_lower_reading1", bounds.l_lower_reading1)
                .num("l_lower_reading2", bounds.l_bracket_reading2.0)
                .num("l_upper_reading2", bounds.l_bracket_reading2.1)
                .num("beta_upper", bounds.beta_upper)
                .flag("has_empty_cell", bounds.has_empty_cell),
        );
    } else if !unbiased {
        warnings.push("exact analysis skipped: layer has a bias".into());
    } else {
        warnings.push(format!(
            "exact analysis skipped: needs n <= {MAX_EXACT_COLS} and m <= {MAX_EXACT_ROWS}"
        ));
    }

    let sampled = sampled_bilip(&layer, args.pairs, seed, true)?;
    let (mut u_lo, mut l_hi) = (sampled.u_lo, sampled.l_hi);
    let (mut uw, mut lw) = (sampled.u_witness.clone(), sampled.l_witness.clone());
    if let Some(w) = &mut uw {
        let (x, y, r) = refine_extreme(&layer, &w.x, &w.y, Direction::Max, args.refine)?;
        (w.x, w.y, u_lo) = (x, y, r);
    }
    if let Some(w) = &mut lw {
        let (x, y, r) = refine_extreme(&layer, &w.x, &w.y, Direction::Min, args.refine)?;
        (w.x, w.y, l_hi) = (x, y, r);
    }
    let u_hi = Some(u_exact.map_or(spectral_upper(&a), |u: f64| u.min(spectral_upper(&a))));
    let mut bracket = BiLipBracket::from_extremes(u_lo, l_hi, u_hi, l_theory, sampled.sample_count, Some(seed), uw, lw);
    bracket.degenerate_skipped = sampled.degenerate_skipped;
    let tol = 1e-12;
    ok &= bracket.u_hi.is_none_or(|u| bracket.u_lo <= u * (1.0 + tol));
    ok &= bracket.l_lo.is_none_or(|l| l <= bracket.l_hi * (1.0 + tol));
    records.push(bracket_record("bracket", &bracket));

    if exact_ok && n <= 2 {
        let oracle = brute_force_bilip(&a, args.resolution)?;
        let beta_oracle = match oracle.u_hi {
            Some(u) if oracle.l_hi > 0.0 => u / oracle.l_hi,
            _ => f64::INFINITY,
        };
        records.push(bracket_record("oracle", &oracle).num("beta_oracle", beta_oracle));
    }

    let cert = sqrt2_certificate(&a, args.probes, seed.substream(1))?;
    if !unbiased {
        warnings.push("certificate computed for the unbiased layer x -> relu(Ax)".into());
        // Far from the origin the bias stops mattering, which carries the
        // certificate over to the biased layer.
        let pairs = sample_pairs(n, args.pairs.min(BIAS_LIMIT_PAIRS), seed.substream(2), true, false);
        let pairs: Vec<_> = pairs.into_iter().filter(|(x, y)| x != y).collect();
        let lim = bias_limit_check(&layer, &pairs, BIAS_LIMIT_ALPHA)?;
        records.push(
            Record::new("bias_limit")
                .num("alpha", lim.alpha)
                .int("pair_count", lim.pair_count)
                .num("beta_lo_unbiased", lim.beta_lo_unbiased)
                .num("beta_lo_biased_scaled", lim.beta_lo_biased_scaled)
                .num("abs_dev", lim.abs_dev),
        );
    }
    ok &= cert_ok(&cert);
    records.push(certificate_record(&cert));
    Ok(Outcome { records, check_passed: ok, warnings })
}

fn certify(args: &CertifyArgs) -> Result<Outcome, CliError> {
    let a = read_matrix_file(&args.matrix)?;
    let cert = sqrt2_certificate(&a, args.probes, RngSeed::new(args.seed))?;
    Ok(Outcome {
        check_passed: cert_ok(&cert),
        records: vec![certificate_record(&cert)],
        warnings: Vec::new(),
    })
}

fn sweep(args: &SweepArgs) -> Result<Outcome, CliError> {
    let report = beta_sweep(args.n, &args.m, RngSeed::new(args.seed), args.pairs)?;
    let mut ok = report.passed();
    let betas: Vec<f64> = report.rows.iter().map(|r| r.estimate).collect();
    if let (Some(first), Some(last)) = (betas.first(), betas.last()) {
        ok &= *last <= first + SWEEP_TREND_SLACK;
        let m_last = *args.m.last().expect("nonempty") as f64;
        if m_last / args.n as f64 >= 1000.0 {
            ok &= (SWEEP_BETA_WINDOW.0..=SWEEP_BETA_WINDOW.1).contains(last);
        }
    }
    let records = report
        .rows
        .iter()
        .map(|row| {
            Record::new("sweep")
                .int("n", args.n)
                .int("m", row.value("m").unwrap_or(0.0) as usize)
                .num("beta_lo", row.estimate)
                .num("cert_ratio", row.value("cert_ratio").unwrap_or(f64::NAN))
                .num("u_lo", row.value("u_lo").unwrap_or(f64::NAN))
                .num("l_hi", row.value("l_hi").unwrap_or(f64::NAN))
                .int("sample_count", row.sample_count)
        })
        .collect();
    Ok(Outcome { records, check_passed: ok, warnings: report.warnings })
}

fn lemmas(args: &LemmasArgs) -> Result<Outcome, CliError> {
    let mut cfg = ExperimentConfig::new(args.n, args.rows, args.seed);
    cfg.pair_count = args.pairs;
    cfg.alpha = args.alpha;
    cfg.beta_param = args.beta;
    let lem = mc_lemma_checks(&cfg)?;
    let exp = expectation_identity_check(&cfg)?;
    let mut out = from_report(lem);
    let exp = from_report(exp);
    out.records.extend(exp.records);
    out.check_passed &= exp.check_passed;
    out.warnings.extend(exp.warnings);
    Ok(out)
}

fn width(args: &WidthArgs) -> Result<Outcome, CliError> {
    let cone = parse_cone(&args.cone, args.n)?;
    let est = gaussian_width_mc(&cone, args.draws, RngSeed::new(args.seed))?;
    let (target, lower, upper) = match &cone.kind {
        ConeKind::FullSpace => {
            let t = chi_mean(args.n);
            (Some(t), Some(t - 4.0 * est.se), Some(t + 4.0 * est.se))
        }
        ConeKind::SparseCone { k } if 2 * k < args.n => {
            let scale = (2.0 * *k as f64 * (args.n as f64 / *k as f64).ln()).sqrt();
            (None, Some(SPARSE_WIDTH_FACTORS.0 * scale), Some(SPARSE_WIDTH_FACTORS.1 * scale))
        }
        ConeKind::SparseCone { .. } => {
            let t = chi_mean(args.n);
            (Some(t), Some(t - 4.0 * est.se), Some(t + 4.0 * est.se))
        }
        ConeKind::CustomHalfspaces { .. } => (None, None, None),
    };
    let passed = match (lower, upper) {
        (Some(l), Some(u)) => (l..=u).contains(&est.mean),
        _ => true,
    };
    let rec = Record::new("width")
        .int("n", args.n)
        .text("cone", &args.cone)
        .int("draws", est.count)
        .num("mean", est.mean)
        .num("standard_error", est.se)
        .flag("lower_bound_only", cone.width_is_lower_bound())
        .opt("target", target)
        .opt("lower", lower)
        .opt("upper", upper)
        .flag("passed", passed);
    Ok(Outcome { records: vec![rec], check_passed: passed, warnings: Vec::new() })
}

fn net(args: &NetArgs) -> Result<Outcome, CliError> {
    let r = epsilon_net_sphere(args.n, args.eps, RngSeed::new(args.seed), args.probes)?;
    let mut rec = Record::new("net")
        .int("n", r.n)
        .num("eps", r.eps)
        .int("size", r.net.len())
        .int("probes", r.probes)
        .flag("verified", r.verified)
        .num("sudakov", r.sudakov);
    if let Some(u) = &r.uncovered {
        rec = rec.list("uncovered", u);
    }
    let mut records = vec![rec];
    if args.points {
        records.extend(
            r.net
                .iter()
                .enumerate()
                .map(|(i, p)| Record::new("net_point").int("index", i).list("point", p)),
        );
    }
    Ok(Outcome { records, check_passed: r.verified, warnings: Vec::new() })
}

/// Matrix of a file path, exposed for tests of the config plumbing.
#[doc(hidden)]
pub fn load_matrix(path: &std::path::Path) -> Result<Matrix, CliError> {
    Ok(read_matrix_file(path)?)
}
