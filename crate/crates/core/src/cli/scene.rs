//! Scene files: the declarative input to `generate`.
//!
//! A scene file is a versioned header line followed by TOML:
//!
//! ```text
//! direct-a-video-scene v1
//! caption = "red circle background"
//!
//! [camera]
//! cx = 0.5
//!
//! [modulation]
//! lambda = 25.0
//! placement = "E,M,D"
//!
//! [[object]]
//! words = ["red", "circle"]
//! start = [0.1, 0.1, 0.4, 0.4]
//! end = [0.6, 0.6, 0.9, 0.9]
//! track = [[0.25, 0.25], [0.75, 0.25], [0.75, 0.75]]
//! ```
//!
//! Every section is optional except `caption`. Semantic errors are
//! collected and reported together, each with its line number.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::camera_control::CAMERA_CUTOFF;
use crate::camgen::CameraParams;
use crate::caption::{Caption, TokenId, BACKGROUND};
use crate::denoiser::{DenoiserConfig, SamplerConfig, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use crate::geometry::BBox;
use crate::object_control::{build_box_trajectory, ModulationSpec, Placement, DEFAULT_LAMBDA, DEFAULT_TAU};
use crate::{Error, Result};

pub const SCENE_HEADER: &str = "direct-a-video-scene v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    /// Caption words bound to this object, e.g. `["red", "circle"]`.
    pub words: Vec<String>,
    pub start: BBox,
    pub end: BBox,
    /// Polyline for the box centre, first point at `start`'s centre and
    /// last at `end`'s.
    pub track: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneModulation {
    pub lambda: f64,
    pub tau: f64,
    pub placement: Placement,
    /// Bind the caption's `background` word to the area outside all boxes.
    pub background: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSampler {
    pub seed: u64,
    pub steps: usize,
    pub guidance: f64,
    pub cutoff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Ppm,
    Gif,
}

impl OutputFormat {
    fn word(self) -> &'static str {
        match self {
            OutputFormat::Ppm => "ppm",
            OutputFormat::Gif => "gif",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneOutput {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Viewing formats written next to the clip file, which is always written.
    pub formats: Vec<OutputFormat>,
}

/// A validated scene with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Caption words without `<sos>`/`<eos>`.
    pub caption: Vec<String>,
    pub objects: Vec<SceneObject>,
    pub camera: CameraParams,
    pub modulation: SceneModulation,
    pub sampler: SceneSampler,
    pub output: SceneOutput,
}

impl SceneSpec {
    /// A scene with only a caption; everything else at its default.
    pub fn minimal(caption: &Caption) -> Self {
        let words = caption.words();
        let model = DenoiserConfig::default();
        Self {
            caption: words[1..words.len() - 1].iter().map(|w| w.to_string()).collect(),
            objects: Vec::new(),
            camera: CameraParams::STATIC,
            modulation: SceneModulation {
                lambda: DEFAULT_LAMBDA,
                tau: DEFAULT_TAU,
                placement: Placement::ALL,
                background: words.contains(&BACKGROUND),
            },
            sampler: SceneSampler {
                seed: 0,
                steps: DEFAULT_STEPS,
                guidance: DEFAULT_GUIDANCE,
                cutoff: CAMERA_CUTOFF,
            },
            output: SceneOutput {
                frames: model.frames,
                height: model.height,
                width: model.width,
                formats: vec![OutputFormat::Ppm, OutputFormat::Gif],
            },
        }
    }

    pub fn caption(&self) -> Result<Caption> {
        Caption::parse(&self.caption.join(" "))
    }

    /// Caption positions (counting `<sos>`) of an object's words.
    pub fn token_positions(&self, object: &SceneObject) -> Result<Vec<usize>> {
        let caption = self.caption()?;
        object
            .words
            .iter()
            .map(|w| {
                let id: TokenId = w.parse()?;
                caption
                    .position(id)
                    .ok_or_else(|| Error::invalid(format!("object word {w:?} is not in the caption")))
            })
            .collect()
    }

    /// The modulation request, or `None` for a scene without objects.
    pub fn modulation_spec(&self) -> Result<Option<ModulationSpec>> {
        if self.objects.is_empty() {
            return Ok(None);
        }
        let caption = self.caption()?;
        let mut objects = Vec::with_capacity(self.objects.len());
        for o in &self.objects {
            objects.push(build_box_trajectory(
                self.token_positions(o)?,
                o.start,
                o.end,
                &o.track,
                self.output.frames,
            )?);
        }
        let background_token = if self.modulation.background {
            caption.position(BACKGROUND.parse()?)
        } else {
            None
        };
        let spec = ModulationSpec {
            lambda: self.modulation.lambda,
            tau: self.modulation.tau,
            objects,
            background_token,
            placement: self.modulation.placement,
        };
        spec.validate(Some(caption.len()))?;
        Ok(Some(spec))
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            steps: self.sampler.steps,
            guidance: self.sampler.guidance,
            camera_cutoff: self.sampler.cutoff,
            modulation: self.modulation_spec()?,
            seed: self.sampler.seed,
        })
    }

    /// Re-checks every invariant; the parser calls this on the resolved spec.
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let caption = self.caption()?;
        if caption.len() <= 2 {
            return Err(Error::invalid("caption has no words"));
        }
        if self.sampler.steps == 0 {
            return Err(Error::invalid("sampler steps must be ≥ 1"));
        }
        self.sampler_config()?.validate()
    }

    /// Canonical scene-file text; parsing it yields `self` again.
    pub fn to_scene_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{SCENE_HEADER}");
        let _ = writeln!(s, "caption = {:?}", self.caption.join(" "));
        let c = &self.camera;
        let _ = writeln!(s, "\n[camera]\ncx = {:?}\ncy = {:?}\ncz = {:?}", c.cx, c.cy, c.cz);
        let m = &self.modulation;
        let _ = writeln!(
            s,
            "\n[modulation]\nlambda = {:?}\ntau = {:?}\nplacement = \"{}\"\nbackground = {}",
            m.lambda, m.tau, m.placement, m.background
        );
        let p = &self.sampler;
        let _ = writeln!(
            s,
            "\n[sampler]\nseed = {}\nsteps = {}\nguidance = {:?}\ncutoff = {:?}",
            p.seed, p.steps, p.guidance, p.cutoff
        );
        let o = &self.output;
        let formats: Vec<String> = o.formats.iter().map(|f| format!("{:?}", f.word())).collect();
        let _ = writeln!(
            s,
            "\n[output]\nframes = {}\nheight = {}\nwidth = {}\nformats = [{}]",
            o.frames,
            o.height,
            o.width,
            formats.join(", ")
        );
        for obj in &self.objects {
            let words: Vec<String> = obj.words.iter().map(|w| format!("{w:?}")).collect();
            let bx = |b: &BBox| format!("[{:?}, {:?}, {:?}, {:?}]", b.x1, b.y1, b.x2, b.y2);
            let track: Vec<String> = obj.track.iter().map(|(x, y)| format!("[{x:?}, {y:?}]")).collect();
            let _ = writeln!(
                s,
                "\n[[object]]\nwords = [{}]\nstart = {}\nend = {}\ntrack = [{}]",
                words.join(", "),
                bx(&obj.start),
                bx(&obj.end),
                track.join(", ")
            );
        }
        s
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    caption: Spanned<String>,
    camera: Option<Spanned<RawCamera>>,
    modulation: Option<RawModulation>,
    sampler: Option<RawSampler>,
    output: Option<RawOutput>,
    #[serde(default)]
    object: Vec<Spanned<RawObject>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCamera {
    cx: Option<f64>,
    cy: Option<f64>,
    cz: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModulation {
    lambda: Option<Spanned<f64>>,
    tau: Option<Spanned<f64>>,
    placement: Option<Spanned<String>>,
    background: Option<Spanned<bool>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    seed: Option<Spanned<i64>>,
    steps: Option<Spanned<i64>>,
    guidance: Option<Spanned<f64>>,
    cutoff: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    frames: Option<Spanned<i64>>,
    height: Option<Spanned<i64>>,
    width: Option<Spanned<i64>>,
    formats: Option<Spanned<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    words: Spanned<Vec<String>>,
    start: Spanned<[f64; 4]>,
    end: Spanned<[f64; 4]>,
    track: Option<Spanned<Vec<[f64; 2]>>>,
}

/// Collects `line N: message` diagnostics.
struct Diagnostics<'a> {
    text: &'a str,
    messages: Vec<String>,
}

impl Diagnostics<'_> {
    fn line(&self, span: &Range<usize>) -> usize {
        self.text[..span.start.min(self.text.len())].matches('\n').count() + 1
    }

    fn push(&mut self, span: &Range<usize>, msg: impl std::fmt::Display) {
        let line = self.line(span);
        self.messages.push(format!("line {line}: {msg}"));
    }
}

fn to_bbox(v: [f64; 4]) -> BBox {
    BBox::new(v[0], v[1], v[2], v[3])
}

pub fn parse_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_scene_str(&text).map_err(|e| match e {
        Error::Scene(msgs) => Error::Scene(
            msgs.into_iter()
                .map(|m| format!("{}: {m}", path.display()))
                .collect(),
        ),
        other => other,
    })
}

/// Parses and validates scene text, filling defaults. All semantic errors
/// are returned together as [`Error::Scene`].
pub fn parse_scene_str(text: &str) -> Result<SceneSpec> {
    // the header must be the first non-blank, non-comment line; it is
    // blanked out so TOML line numbers stay aligned with the file
    let mut body = String::with_capacity(text.len());
    let mut header_seen = false;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim();
        if !header_seen && !trimmed.is_empty() && !trimmed.starts_with('#') {
            if trimmed != SCENE_HEADER {
                return Err(Error::Scene(vec![format!(
                    "line {}: expected header {SCENE_HEADER:?}, found {trimmed:?}",
                    n + 1
                )]));
            }
            header_seen = true;
            body.push_str(&"\n".repeat(line.matches('\n').count()));
            continue;
        }
        body.push_str(line);
    }
    if !header_seen {
        return Err(Error::Scene(vec![format!("missing header {SCENE_HEADER:?}")]));
    }
    let mut d = Diagnostics {
        text: &body,
        messages: Vec::new(),
    };
    let raw: RawScene = match toml::from_str(&body) {
        Ok(r) => r,
        Err(e) => {
            let msg = e.message().to_string();
            match e.span() {
                Some(span) => d.push(&span, msg),
                None => d.messages.push(msg),
            }
            return Err(Error::Scene(d.messages));
        }
    };

    let model = DenoiserConfig::default();
    let caption_span = raw.caption.span();
    let caption = match Caption::parse(raw.caption.get_ref()) {
        Ok(c) if c.len() > 2 => Some(c),
        Ok(_) => {
            d.push(&caption_span, "caption has no words");
            None
        }
        Err(e) => {
            d.push(&caption_span, e);
            None
        }
    };
    let mut spec = SceneSpec::minimal(caption.as_ref().unwrap_or(&Caption::null()));

    if let Some(cam) = &raw.camera {
        let r = cam.get_ref();
        let p = CameraParams {
            cx: r.cx.unwrap_or(0.0),
            cy: r.cy.unwrap_or(0.0),
            cz: r.cz.unwrap_or(1.0),
        };
        match p.validate() {
            Ok(()) => spec.camera = p,
            Err(e) => d.push(&cam.span(), e),
        }
    }

    if let Some(m) = &raw.modulation {
        if let Some(v) = &m.lambda {
            if v.get_ref().is_finite() && *v.get_ref() >= 0.0 {
                spec.modulation.lambda = *v.get_ref();
            } else {
                d.push(&v.span(), format!("lambda must be ≥ 0, got {}", v.get_ref()));
            }
        }
        if let Some(v) = &m.tau {
            if (0.0..=1.0).contains(v.get_ref()) {
                spec.modulation.tau = *v.get_ref();
            } else {
                d.push(&v.span(), format!("tau must lie in [0, 1], got {}", v.get_ref()));
            }
        }
        if let Some(v) = &m.placement {
            match v.get_ref().parse() {
                Ok(p) => spec.modulation.placement = p,
                Err(e) => d.push(&v.span(), e),
            }
        }
        if let Some(v) = &m.background {
            let has_word = spec.caption.iter().any(|w| w == BACKGROUND);
            if *v.get_ref() && !has_word && caption.is_some() {
                d.push(&v.span(), "background = true but the caption has no \"background\" word");
            }
            spec.modulation.background = *v.get_ref() && has_word;
        }
    }

    if let Some(s) = &raw.sampler {
        if let Some(v) = &s.seed {
            match u64::try_from(*v.get_ref()) {
                Ok(seed) => spec.sampler.seed = seed,
                Err(_) => d.push(&v.span(), format!("seed must be ≥ 0, got {}", v.get_ref())),
            }
        }
        if let Some(v) = &s.steps {
            match usize::try_from(*v.get_ref()) {
                Ok(n) if (1..=1000).contains(&n) => spec.sampler.steps = n,
                _ => d.push(&v.span(), format!("steps must lie in 1..=1000, got {}", v.get_ref())),
            }
        }
        if let Some(v) = &s.guidance {
            if v.get_ref().is_finite() && *v.get_ref() >= 0.0 {
                spec.sampler.guidance = *v.get_ref();
            } else {
                d.push(&v.span(), format!("guidance must be ≥ 0, got {}", v.get_ref()));
            }
        }
        if let Some(v) = &s.cutoff {
            if (0.0..=1.0).contains(v.get_ref()) {
                spec.sampler.cutoff = *v.get_ref();
            } else {
                d.push(&v.span(), format!("cutoff must lie in [0, 1], got {}", v.get_ref()));
            }
        }
    }

    if let Some(o) = &raw.output {
        let mut dim = |v: &Option<Spanned<i64>>, name: &str, want: usize, slot: &mut usize| {
            if let Some(v) = v {
                if *v.get_ref() == want as i64 {
                    *slot = want;
                } else {
                    d.push(
                        &v.span(),
                        format!("{name} = {} but the model produces {want}", v.get_ref()),
                    );
                }
            }
        };
        dim(&o.frames, "frames", model.frames, &mut spec.output.frames);
        dim(&o.height, "height", model.height, &mut spec.output.height);
        dim(&o.width, "width", model.width, &mut spec.output.width);
        if let Some(v) = &o.formats {
            let mut formats = Vec::new();
            for f in v.get_ref() {
                match f.as_str() {
                    "ppm" => formats.push(OutputFormat::Ppm),
                    "gif" => formats.push(OutputFormat::Gif),
                    other => d.push(&v.span(), format!("unknown output format {other:?} (ppm, gif)")),
                }
            }
            formats.dedup();
            spec.output.formats = formats;
        }
    }

    for (i, obj) in raw.object.iter().enumerate() {
        let r = obj.get_ref();
        let before = d.messages.len();
        if r.words.get_ref().is_empty() {
            d.push(&r.words.span(), format!("object {i} binds no words"));
        }
        for w in r.words.get_ref() {
            match w.parse::<TokenId>() {
                Err(e) => d.push(&r.words.span(), e),
                Ok(id) if id.is_boundary() => {
                    d.push(&r.words.span(), format!("object {i} cannot bind {w:?}"))
                }
                Ok(id) => {
                    if caption.as_ref().is_some_and(|c| c.position(id).is_none()) {
                        d.push(&r.words.span(), format!("object word {w:?} is not in the caption"));
                    }
                }
            }
        }
        let (start, end) = (to_bbox(*r.start.get_ref()), to_bbox(*r.end.get_ref()));
        for (name, b, span) in [("start", start, r.start.span()), ("end", end, r.end.span())] {
            let inside = [b.x1, b.y1, b.x2, b.y2].iter().all(|v| (0.0..=1.0).contains(v));
            if !(b.is_valid() && inside) {
                d.push(
                    &span,
                    format!(
                        "object {i} {name} box [{}, {}, {}, {}] must satisfy 0 ≤ x1 < x2 ≤ 1, 0 ≤ y1 < y2 ≤ 1",
                        b.x1, b.y1, b.x2, b.y2
                    ),
                );
            }
        }
        let track = match &r.track {
            Some(t) => t.get_ref().iter().map(|p| (p[0], p[1])).collect(),
            None => vec![start.center(), end.center()],
        };
        if d.messages.len() == before {
            let positions = vec![1; r.words.get_ref().len()];
            if let Err(e) = build_box_trajectory(positions, start, end, &track, spec.output.frames) {
                let span = r.track.as_ref().map_or(obj.span(), |t| t.span());
                d.push(&span, format!("object {i}: {e}"));
            }
        }
        spec.objects.push(SceneObject {
            words: r.words.get_ref().clone(),
            start,
            end,
            track,
        });
    }

    if d.messages.is_empty() {
        if let Err(e) = spec.validate() {
            d.push(&obj_span_or_zero(&raw), e);
        }
    }
    if d.messages.is_empty() {
        Ok(spec)
    } else {
        Err(Error::Scene(d.messages))
    }
}

fn obj_span_or_zero(raw: &RawScene) -> Range<usize> {
    raw.object.first().map_or(0..0, |o| o.span())
}
