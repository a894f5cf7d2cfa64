use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use polyconv::events::{
    bin_direct, bin_event_volume, decode_frames, encode_frames, parse_events, BinGrid, EventFormat, SensorGeometry,
};
use polyconv::kernels::{materialize, KernelCoefficients, KernelDims, KernelLayout};
use polyconv::model::presets::{
    gesture_classifier, linear_two_block, prophesee_detector, random_blocks, single_temporal, temporal_stack,
};
use polyconv::model::{
    cost_report, decode_centernet, load_model, majority_filter, resample_model, save_model, DecodeOptions,
    EmissionMode, InputGeometry, Layer, ModelSpec, StreamState,
};
use polyconv::planner::{parse_expr, peak_tensor_size, ranked_paths, ConvMode, ConvPair, Objective};
use polyconv::polybasis::{build_basis, discretize_basis, JacobiParams};
use polyconv::tensor::{DenseTensor, Label};

use crate::{
    BinArgs, CostArgs, EmissionArg, FormatArg, GenBasisArgs, InferArgs, InitModelArgs, MethodArg, ModeArg,
    ObjectiveArg, PlanArgs, PresetArg, ResampleArgs,
};

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<polyconv::Error> for CliError {
    fn from(e: polyconv::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<ModelSpec> {
    load_model(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Memory => Objective::Memory,
            ObjectiveArg::Compute => Objective::Compute,
        }
    }
}

impl From<EmissionArg> for EmissionMode {
    fn from(e: EmissionArg) -> Self {
        match e {
            EmissionArg::Strict => EmissionMode::Strict,
            EmissionArg::ZeroPadded => EmissionMode::ZeroPadded,
        }
    }
}

/// Reads a CSV of numbers, one row per line; `#` lines are comments.
fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = String::from_utf8(read(path)?).map_err(|_| invalid(format!("{}: not UTF-8 text", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn gen_basis(a: &GenBasisArgs) -> Result<String> {
    if a.bin_us == 0 {
        return Err(invalid("--bin-us must be positive"));
    }
    let params = JacobiParams::new(a.alpha, a.beta, a.degree)?;
    let db = discretize_basis(&build_basis(params)?, a.bins, a.bin_us as f64 / 1e6)?;
    let kernels = match &a.gamma {
        Some(path) => {
            let rows = read_rows(path)?;
            let nb = db.basis_size();
            if rows.is_empty() || rows.iter().any(|r| r.len() != nb) {
                return Err(invalid(format!("{}: every row needs {nb} coefficients", path.display())));
            }
            let gamma =
                KernelCoefficients::new(KernelLayout::Depthwise, KernelDims::depthwise(rows.len(), nb), rows.concat())?;
            Some(materialize(&gamma, &db)?)
        }
        None => None,
    };

    let mut file =
        format!("# alpha={} beta={} degree={} bins={} bin_us={}\n", a.alpha, a.beta, a.degree, a.bins, a.bin_us);
    let mut report = String::new();
    for n in 0..db.basis_size() {
        let row = db.row(n);
        writeln!(file, "{}", csv_row(row)).unwrap();
        writeln!(report, "row {n} sum {:.10}", row.iter().sum::<f64>()).unwrap();
    }
    write(&a.out, file)?;
    if let (Some(k), Some(out)) = (kernels, &a.kernels_out) {
        let mut text = format!("# kernels={} taps={}\n", k.in_channels(), k.num_taps());
        for i in 0..k.in_channels() {
            writeln!(text, "{}", csv_row(k.taps(i))).unwrap();
        }
        write(out, text)?;
        writeln!(report, "{} kernels written", k.in_channels()).unwrap();
    }
    Ok(report)
}

fn parse_size(s: &str) -> Result<(String, usize)> {
    let (label, size) = s.split_once('=').ok_or_else(|| invalid(format!("size {s:?} is not label=extent")))?;
    let size = size.trim().parse().map_err(|_| invalid(format!("size {s:?}: bad extent")))?;
    Ok((label.trim().to_string(), size))
}

fn parse_conv(s: &str) -> Result<ConvPair> {
    let parts: Vec<&str> = s.split(':').collect();
    let [input, output, k] = parts[..] else {
        return Err(invalid(format!("conv pair {s:?} is not input:output:kernel")));
    };
    let k = k.trim().parse().map_err(|_| invalid(format!("conv pair {s:?}: bad kernel size")))?;
    Ok(ConvPair::new(input.trim(), output.trim(), k))
}

/// One row per path: rank, path, extra memory, compute, peak intermediate
/// size. Rows are sorted by the objective; `*` marks the optimum.
pub fn plan(a: &PlanArgs) -> Result<String> {
    let sizes = a.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let sizes = sizes.into_iter().map(|(l, n)| (Label::new(l), n)).collect();
    let convs = a.convs.iter().map(|s| parse_conv(s)).collect::<Result<Vec<_>>>()?;
    let mode = match a.mode {
        ModeArg::Valid => ConvMode::Valid,
        ModeArg::Same => ConvMode::Same,
    };
    let expr = parse_expr(&a.expr, &sizes, convs, mode)?;
    let ranked = ranked_paths(&expr, a.objective.into())?;
    let mut out =
        format!("{:<4} {:<3} {:<24} {:>14} {:>14} {:>14}\n", "rank", "opt", "path", "memory", "compute", "peak");
    for (i, (path, cost)) in ranked.iter().enumerate() {
        let peak = peak_tensor_size(&expr, path)?;
        let mark = if i == 0 { "*" } else { "" };
        writeln!(
            out,
            "{:<4} {:<3} {:<24} {:>14} {:>14} {:>14}",
            i + 1,
            mark,
            path.to_string(),
            cost.extra_memory,
            cost.total_compute,
            peak
        )
        .unwrap();
    }
    Ok(out)
}

fn event_format(a: &BinArgs) -> EventFormat {
    match a.format {
        Some(FormatArg::Csv) => EventFormat::Csv,
        Some(FormatArg::Binary) => EventFormat::Binary,
        None => match a.events.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("txt") => EventFormat::Csv,
            _ => EventFormat::Binary,
        },
    }
}

pub fn bin(a: &BinArgs) -> Result<String> {
    if a.bin_us == 0 || a.frames == 0 || a.height == 0 || a.width == 0 {
        return Err(invalid("--bin-us, --frames, --height and --width must be positive"));
    }
    let sensor = match (a.sensor_width, a.sensor_height) {
        (Some(w), Some(h)) => SensorGeometry::new(w, h),
        _ => SensorGeometry::new(a.width, a.height),
    };
    let events = parse_events(&read(&a.events)?, event_format(a), sensor)?;
    let grid = BinGrid::new(a.bin_us, a.frames, a.height, a.width).with_origin(a.origin_us);
    let ft = match a.method {
        MethodArg::Direct => {
            if sensor != SensorGeometry::new(a.width, a.height) {
                return Err(invalid("direct binning cannot resize; use --method event-volume"));
            }
            bin_direct(&events, &grid)?
        }
        MethodArg::EventVolume => bin_event_volume(&events, &grid, Some(sensor))?,
    };
    write(&a.out, encode_frames(&ft))?;
    let (c, t, h, w) = ft.dims();
    Ok(format!("events {}\nshape {c}x{t}x{h}x{w}\ntotal mass {}\n", events.len(), ft.total()))
}

fn argmax(values: &[f64]) -> (usize, f64) {
    values.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
}

/// Writes one CSV file of predictions. Detection heads produce one row
/// per detection; models with a 1x1 output produce one class per frame
/// (argmax, then the majority filter); anything else is written densely.
pub fn infer(a: &InferArgs) -> Result<String> {
    if a.window == 0 {
        return Err(invalid("--window must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(invalid("--threshold must lie in [0, 1]"));
    }
    let spec = read_model(&a.model)?;
    let ft = decode_frames(&read(&a.input)?).map_err(|e| invalid(format!("{}: {e}", a.input.display())))?;
    if ft.bin_size_us() != spec.bin_size_us() {
        return Err(invalid(format!(
            "input bins are {} us, model expects {} us; resample the model first",
            ft.bin_size_us(),
            spec.bin_size_us()
        )));
    }
    let mut input = ft.volume().clone();
    let scale = spec.input_scale();
    if scale != 1.0 {
        input.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    let mut state = StreamState::with_mode(&spec, a.mode.into())?;
    let outputs = state.run(&spec, &input)?;
    let emitted: Vec<(usize, DenseTensor)> =
        outputs.into_iter().enumerate().filter_map(|(i, y)| y.map(|y| (i, y))).collect();
    let time = |i: usize| (ft.origin_us() + (i as u64 + 1) * ft.bin_size_us()) as f64 / 1e6;

    let head = spec.layers().iter().rev().find_map(|l| match l {
        Layer::CenterNetHead { num_classes } => Some(*num_classes),
        _ => None,
    });
    let out_shape = spec.output_shape();
    let mut text = String::new();
    let rows;
    if let Some(classes) = head {
        text.push_str("frame,time_s,class,score,x,y,width,height\n");
        let opts = DecodeOptions { threshold: a.threshold, top_k: a.top_k };
        let mut n = 0;
        for (i, y) in &emitted {
            for d in decode_centernet(y, classes, opts)? {
                writeln!(text, "{i},{},{},{},{},{},{},{}", time(*i), d.class, d.score, d.x, d.y, d.width, d.height)
                    .unwrap();
                n += 1;
            }
        }
        rows = n;
    } else if out_shape.height == 1 && out_shape.width == 1 {
        text.push_str("frame,time_s,class,score,filtered_class\n");
        let raw: Vec<(usize, f64)> = emitted.iter().map(|(_, y)| argmax(y.data())).collect();
        let classes: Vec<usize> = raw.iter().map(|r| r.0).collect();
        let filtered = majority_filter(&classes, a.window)?;
        for (((i, _), (class, score)), f) in emitted.iter().zip(&raw).zip(&filtered) {
            writeln!(text, "{i},{},{class},{score},{f}", time(*i)).unwrap();
        }
        rows = emitted.len();
    } else {
        text.push_str("frame,time_s,channel,y,x,value\n");
        let mut n = 0;
        for (i, y) in &emitted {
            let (c, _, h, w) = y.dims4()?;
            for ch in 0..c {
                for yy in 0..h {
                    for xx in 0..w {
                        writeln!(text, "{i},{},{ch},{yy},{xx},{}", time(*i), y.data()[(ch * h + yy) * w + xx]).unwrap();
                    }
                }
            }
            n += c * h * w;
        }
        rows = n;
    }
    write(&a.out, text)?;
    Ok(format!("frames {}\npredictions {}\nrows {rows}\n", input.shape()[1], emitted.len()))
}

pub fn resample(a: &ResampleArgs) -> Result<String> {
    if a.bin_us == 0 {
        return Err(invalid("--bin-us must be positive"));
    }
    let spec = read_model(&a.model)?;
    let out = resample_model(&spec, a.bin_us)?;
    write(&a.out, save_model(&out)?)?;
    let mut report = format!("bin_us {} -> {}\n", spec.bin_size_us(), out.bin_size_us());
    for ((i, old), (_, new)) in spec.temporal_layers().zip(out.temporal_layers()) {
        writeln!(report, "layer {i} bins {} -> {}", old.num_taps(), new.num_taps()).unwrap();
    }
    writeln!(report, "input_scale {}", out.input_scale()).unwrap();
    Ok(report)
}

/// Per-layer table (index, kind, parameters, MACs per frame, path) then
/// totals.
pub fn cost(a: &CostArgs) -> Result<String> {
    let spec = read_model(&a.model)?;
    let r = cost_report(&spec, a.objective.into())?;
    let mut out = format!("{:<5} {:<18} {:>12} {:>16} {}\n", "layer", "kind", "params", "macs_per_frame", "path");
    for l in &r.layers {
        let path = l.path.as_ref().map_or("-".to_string(), ToString::to_string);
        writeln!(out, "{:<5} {:<18} {:>12} {:>16} {path}", l.index, l.kind, l.params, l.macs).unwrap();
    }
    writeln!(out, "parameters {}", r.parameters).unwrap();
    writeln!(out, "macs_per_frame {}", r.macs_per_frame).unwrap();
    writeln!(out, "frames_per_second {}", r.frames_per_second).unwrap();
    writeln!(out, "macs_per_second {}", r.macs_per_second).unwrap();
    Ok(out)
}

pub fn init_model(a: &InitModelArgs) -> Result<String> {
    if a.bin_us == 0 {
        return Err(invalid("--bin-us must be positive"));
    }
    let geometry = (a.height, a.width);
    let spec = match a.preset {
        PresetArg::Detector => prophesee_detector(a.seed)?,
        PresetArg::Gesture => gesture_classifier(a.seed, a.height, a.width, a.bins, a.classes)?,
        PresetArg::TemporalStack => temporal_stack(a.seed, a.layers, a.bins, a.channels, a.bin_us, geometry)?,
        PresetArg::LinearTwoBlock => linear_two_block(a.seed, a.bins, a.bin_us, a.height, a.width, a.channels)?,
        PresetArg::SingleTemporal => single_temporal(a.seed, a.channels, a.channels, a.bins, a.bin_us, geometry)?,
        PresetArg::RandomBlocks => {
            random_blocks(a.seed, a.layers, a.bins, InputGeometry::new(a.channels, a.height, a.width), a.bin_us)?
        }
    }
    .with_emission(a.emission.into());
    write(&a.out, save_model(&spec)?)?;
    let g = spec.input();
    let o = spec.output_shape();
    Ok(format!(
        "input {}x{}x{}\noutput {}x{}x{}\nlag {}\nparameters {}\n",
        g.channels,
        g.height,
        g.width,
        o.channels,
        o.height,
        o.width,
        o.lag,
        spec.param_count()
    ))
}
