use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use nsh_core::config::RunConfig;
use nsh_core::contour::{evaluate_grid, extract as extract_contour, BoxDomain, Contour, GridQuantity};
use nsh_core::geometry::{
    self, load_obj_polyline, load_ply, obj_has_only_lines, save_grid, save_mesh, save_obj_polyline, MeshFormat,
    PointFormat,
};
use nsh_core::losses::Regularizer;
use nsh_core::metrics::{evaluate as evaluate_metrics, sample_polyline, sample_surface};
use nsh_core::morse::analyze as analyze_field;
use nsh_core::sinenet::load_model;
use nsh_core::trainer::{fit as fit_net, CheckpointWriter, LogObserver, Observers};
use nsh_core::{AnalyticField, PointCloud, ScalarField, SineNetwork};

pub enum CliError {
    Config(String),
    Pipeline(nsh_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl From<nsh_core::Error> for CliError {
    fn from(e: nsh_core::Error) -> Self {
        match e {
            nsh_core::Error::Config(m) => CliError::Config(m),
            e => CliError::Pipeline(e),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn pipeline(msg: String) -> CliError {
    CliError::Pipeline(nsh_core::Error::InvalidArgument(msg))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    std::fs::write(path, text + "\n").map_err(|e| nsh_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn point_format(path: &Path) -> Result<PointFormat> {
    PointFormat::from_path(path)
        .ok_or_else(|| pipeline(format!("{}: unrecognized point file extension (expected .xyz or .ply)", path.display())))
}

#[derive(Args)]
pub struct FitArgs {
    /// Input point cloud (.xyz or .ply); normals, if present, are ignored
    /// unless the Neumann term is enabled.
    pub cloud: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path; the loss history goes to `<out>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Input dimension; by default 2 when every z coordinate is zero.
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dim: Option<u8>,
    /// singular_hessian, dirichlet, hessian_l2, hessian_l1, laplacian or none.
    #[arg(long)]
    pub regularizer: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

pub fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.iters {
        t.iters = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = a.log_every {
        t.log_every = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(r) = &a.regularizer {
        t.loss.regularizer = serde_json::from_value::<Regularizer>(json!(r))
            .map_err(|_| CliError::Config(format!("unknown regularizer `{r}`")))?;
    }
    if let Some(v) = a.hidden_layers {
        cfg.network.hidden_layers = v;
    }
    if let Some(v) = a.width {
        cfg.network.width = v;
    }
    cfg.validate()?;

    let out = a.out.or(cfg.paths.model.clone()).unwrap_or_else(|| PathBuf::from("model.nsh"));
    let cloud = geometry::load_point_cloud(&a.cloud, point_format(&a.cloud)?)?;
    let planar = cloud.dim() == 2 || cloud.points().all(|p| p[2] == 0.0);
    let dim = match a.dim {
        Some(d) => d as usize,
        None if planar => 2,
        None => 3,
    };
    if dim == 2 && !planar {
        return Err(pipeline(format!("{}: --dim 2 needs every z coordinate to be zero", a.cloud.display())));
    }
    let cloud = if dim == 2 { cloud.to_planar()? } else { cloud };
    log::info!("{} points, dimension {dim}", cloud.len());

    let arch = cfg.network.architecture(dim)?;
    let net = SineNetwork::init(arch, cfg.train.seed)?;
    let mut writer = CheckpointWriter::new(&out, &cfg.train);
    let mut logger = LogObserver;
    let mut obs = Observers(vec![&mut logger, &mut writer]);
    let (_, history) = fit_net(&cloud, net, &cfg.train, &mut obs)?;

    if let Some(r) = history.last() {
        let t = &r.terms;
        println!(
            "iter {} total {:.6e} manifold {:.6e} non_manifold {:.6e} eikonal {:.6e} regularizer {:.6e}{}",
            r.iteration,
            r.total,
            t.manifold,
            t.non_manifold,
            t.eikonal,
            t.regularizer,
            t.neumann.map(|n| format!(" neumann {n:.6e}")).unwrap_or_default()
        );
    }
    println!("model {}", out.display());
    println!("history {}", CheckpointWriter::sidecar_path(&out).display());
    Ok(())
}

#[derive(Args)]
pub struct ExtractArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid nodes per axis.
    #[arg(long)]
    pub res: Option<usize>,
    /// .obj (meshes and 2D polylines) or .ply (meshes).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub iso: Option<f64>,
    /// Map the contour back to the input coordinates.
    #[arg(long)]
    pub world_units: bool,
}

pub fn extract(a: ExtractArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(r) = a.res {
        cfg.extract.resolution = r;
    }
    if let Some(i) = a.iso {
        cfg.extract.iso = i;
    }
    cfg.extract.world_units |= a.world_units;
    cfg.validate()?;
    let out = a.out.or(cfg.paths.mesh.clone()).unwrap_or_else(|| PathBuf::from("mesh.obj"));
    let net = load_model(&a.model)?;
    let e = &cfg.extract;
    match extract_contour(&net, e.resolution, e.iso, e.world_units)? {
        Contour::Curve(p) => {
            if MeshFormat::from_path(&out) != Some(MeshFormat::Obj) {
                return Err(pipeline(format!("{}: 2D contours are written as .obj", out.display())));
            }
            save_obj_polyline(&p, &out)?;
            println!(
                "{} vertices, {} segments, {} components -> {}",
                p.vertices().len(),
                p.segments().len(),
                p.connected_components(),
                out.display()
            );
            if p.is_empty() {
                println!("note: the zero level set does not cross the grid");
            }
        }
        Contour::Surface(m) => {
            let fmt = MeshFormat::from_path(&out)
                .ok_or_else(|| pipeline(format!("{}: expected .obj or .ply", out.display())))?;
            save_mesh(&m, &out, fmt)?;
            println!(
                "{} vertices, {} triangles, euler characteristic {}, closed {} -> {}",
                m.vertices().len(),
                m.triangles().len(),
                m.euler_characteristic(),
                m.is_closed(),
                out.display()
            );
            if m.is_empty() {
                println!("note: the zero level set does not cross the grid");
            }
        }
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted surface: mesh (.obj/.ply), 2D contour (.obj) or points.
    pub pred: PathBuf,
    /// Reference surface, same kinds as `pred`.
    pub gt: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Points sampled from each mesh or contour.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long = "fscore-thresh")]
    pub fscore_thresh: Option<f64>,
    /// Unsigned normal consistency.
    #[arg(long)]
    pub absolute_normals: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Meshes and contours are sampled; point files are used as they are.
fn load_surface(path: &Path, samples: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    match geometry::extension(path).as_deref() {
        Some("obj") => {
            if obj_has_only_lines(path)? {
                Ok(sample_polyline(&load_obj_polyline(path)?, samples, rng)?)
            } else {
                Ok(sample_surface(&geometry::load_obj_mesh(path)?, samples, rng)?)
            }
        }
        Some("ply") => {
            let ply = load_ply(path)?;
            if ply.faces.is_empty() {
                Ok(ply.into_point_cloud()?)
            } else {
                Ok(sample_surface(&ply.into_mesh()?, samples, rng)?)
            }
        }
        _ => Ok(geometry::load_point_cloud(path, point_format(path)?)?),
    }
}

fn match_dims(a: PointCloud, b: PointCloud) -> Result<(PointCloud, PointCloud)> {
    let flat = |c: &PointCloud| c.dim() == 2 || c.points().all(|p| p[2] == 0.0);
    match (a.dim(), b.dim()) {
        (x, y) if x == y => Ok((a, b)),
        _ if flat(&a) && flat(&b) => Ok((a.to_planar()?, b.to_planar()?)),
        (x, y) => Err(pipeline(format!("cannot compare a {x}D surface with a {y}D one"))),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let m = &mut cfg.metrics;
    if let Some(v) = a.samples {
        m.samples = v;
    }
    if let Some(v) = a.fscore_thresh {
        m.fscore_threshold = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    m.absolute_normals |= a.absolute_normals;
    cfg.validate()?;
    let m = &cfg.metrics;
    let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
    let pred = load_surface(&a.pred, m.samples, &mut rng)?;
    let gt = load_surface(&a.gt, m.samples, &mut rng)?;
    let (pred, gt) = match_dims(pred, gt)?;
    let report = evaluate_metrics(&gt, &pred, m)?;
    println!("{}", report.summary());
    if report.normal_consistency.is_none() {
        let which: Vec<&str> = [(&pred, "prediction"), (&gt, "reference")]
            .iter()
            .filter(|(c, _)| !c.has_normals())
            .map(|(_, n)| *n)
            .collect();
        println!("note: normal consistency skipped, no normals on the {}", which.join(" or "));
    }
    if let Some(out) = a.out.or(cfg.paths.report.clone()) {
        let mut v = serde_json::to_value(&report).expect("report serializes");
        v["pred"] = json!(a.pred);
        v["gt"] = json!(a.gt);
        write_json(&out, &v)?;
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Builtin {
    Sphere,
    Circle,
    Torus,
}

impl Builtin {
    fn field(self) -> AnalyticField {
        match self {
            Builtin::Sphere => AnalyticField::unit_sphere(),
            Builtin::Circle => AnalyticField::unit_circle(),
            Builtin::Torus => AnalyticField::Torus { major: 1.0, minor: 0.4 },
        }
    }
}

#[derive(Args)]
pub struct AnalyzeArgs {
    #[arg(required_unless_present = "builtin", conflicts_with = "builtin")]
    pub model: Option<PathBuf>,
    /// Analyze a closed-form distance field instead of a model.
    #[arg(long, value_enum)]
    pub builtin: Option<Builtin>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shell half-width delta.
    #[arg(long, allow_hyphen_values = true)]
    pub shell: Option<f64>,
    /// Seed grid nodes per axis (also the dump resolution).
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub shell_samples: Option<usize>,
    /// Points seeding the shell statistics; defaults to the extracted zero contour.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    /// Write value, gradient-norm, Hessian determinant and trace grids here.
    #[arg(long)]
    pub dump_fields: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contour vertices in the field's own coordinates.
fn contour_cloud(net: &SineNetwork, res: usize) -> Result<Option<PointCloud>> {
    let pts: Vec<f64> = match extract_contour(net, res, 0.0, false)? {
        Contour::Curve(p) => p.vertices().iter().flatten().copied().collect(),
        Contour::Surface(m) => m.vertices().iter().flatten().copied().collect(),
    };
    let d = net.architecture().input_dim;
    Ok(if pts.len() >= 2 * d { Some(PointCloud::new(d, pts, None)?) } else { None })
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let an = &mut cfg.analyze;
    if let Some(v) = a.shell {
        an.delta = v;
    }
    if let Some(v) = a.grid {
        an.resolution = v;
    }
    if let Some(v) = a.shell_samples {
        an.shell_samples = v;
    }
    if let Some(v) = a.seed {
        an.seed = v;
    }
    cfg.validate()?;
    let an = &cfg.analyze;

    let builtin = a.builtin.map(Builtin::field);
    let net = match &a.model {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let (field, domain): (&dyn ScalarField, BoxDomain) = match (&net, &builtin) {
        (Some(n), _) => (n, BoxDomain::cube(n.architecture().input_dim)),
        (None, Some(f)) => {
            let d = f.dim();
            (f, BoxDomain::new(vec![-1.5; d], vec![1.5; d])?)
        }
        _ => unreachable!("clap requires a model or a builtin"),
    };
    let d = field.dim();

    let cloud = match (&a.cloud, &net, &builtin) {
        (Some(p), _, _) => {
            let mut c = geometry::load_point_cloud(p, point_format(p)?)?;
            if d == 2 {
                c = c.to_planar()?;
            }
            if let Some(n) = &net {
                c = PointCloud::new(d, n.transform().apply_all(c.coords()), None)?;
            }
            Some(c)
        }
        (None, Some(n), _) => contour_cloud(n, an.resolution)?,
        (None, None, Some(f)) => Some(PointCloud::new(d, f.surface_samples(2000)?, None)?),
        _ => None,
    };
    if cloud.is_none() {
        println!("note: shell statistics skipped, the zero level set does not cross the grid");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(an.seed);
    let report = analyze_field(field, &domain, &an.morse(), cloud.as_ref(), an.shell_samples, &mut rng)?;
    let kinds = if d == 3 {
        format!("{} minima, {} 1-saddles, {} 2-saddles, {} maxima", report.minima, report.saddle1, report.saddle2, report.maxima)
    } else {
        format!("{} minima, {} saddles, {} maxima", report.minima, report.saddle1, report.maxima)
    };
    println!(
        "{kinds}, {} degenerate; alternating sum {} (|f| < {})",
        report.degenerate, report.euler_characteristic, report.delta
    );
    if let Some(s) = &report.shell {
        println!(
            "shell: mean |det H| {:.3e}, mean |tr H| {:.3e}, mean |grad f| {:.6}",
            s.mean_abs_det, s.mean_abs_trace, s.mean_grad_norm
        );
    }

    if let Some(dir) = &a.dump_fields {
        std::fs::create_dir_all(dir).map_err(|e| nsh_core::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let q = [GridQuantity::Value, GridQuantity::GradNorm, GridQuantity::HessDet, GridQuantity::HessTrace];
        for (grid, quantity) in evaluate_grid(field, an.resolution, &domain, &q)?.iter().zip(q) {
            save_grid(grid, &dir.join(format!("{}.grid", quantity.name())))?;
        }
        println!("fields written to {}", dir.display());
    }

    if let Some(out) = a.out.or(cfg.paths.report.clone()) {
        let mut v = serde_json::to_value(&report).expect("report serializes");
        v["source"] = match (&a.model, a.builtin) {
            (Some(p), _) => json!(p),
            (None, Some(b)) => json!(format!("builtin:{}", b.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default())),
            _ => json!(null),
        };
        write_json(&out, &v)?;
    }
    Ok(())
}
