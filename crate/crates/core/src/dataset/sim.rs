use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CageLayout, Point, Recording};
use crate::error::{Error, Result};
use crate::featurize::{StopEvent, TrajectorySample};
use crate::label::{Age, Sex, Stereotype};

/// Travel must be clearly faster than the stop threshold.
const MIN_TRAVEL_SPEED: f64 = 5.0;
/// Roaming waypoints keep this distance from the walls.
const WAYPOINT_MARGIN: f64 = 1.0;
const CAGE_HOTSPOT_STD: f64 = 2.0;
/// Cage hotspots keep this distance from every anchor, so they never
/// imitate a class preference.
const CAGE_HOTSPOT_CLEARANCE: f64 = 10.0;
/// Stops starting inside a cage's rest window last this many times longer.
const REST_STRETCH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Dome,
    FeederUpper,
    FeederLower,
    Water,
}

impl Anchor {
    pub const ALL: [Anchor; 4] = [Anchor::Dome, Anchor::FeederUpper, Anchor::FeederLower, Anchor::Water];
}

/// An isotropic Gaussian centred on an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub anchor: Anchor,
    pub weight: f64,
    /// Standard deviation per axis, cm.
    pub std: f64,
}

impl MixtureComponent {
    pub fn new(anchor: Anchor, weight: f64, std: f64) -> Self {
        MixtureComponent { anchor, weight, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub mixture: Vec<MixtureComponent>,
    /// Log-uniform bounds on stop duration, seconds.
    pub stop_duration: [f64; 2],
    /// cm/s.
    pub travel_speed: f64,
    /// Rate (1/s) of the exponential roaming time spent between two stops,
    /// on top of the direct leg.
    pub inter_stop_rate: f64,
}

impl ClassProfile {
    fn with_mixture(mixture: Vec<MixtureComponent>) -> Self {
        ClassProfile { mixture, stop_duration: [2.0, 20.0], travel_speed: 15.0, inter_stop_rate: 0.5 }
    }

    /// Equal-weight blend of two profiles: mixtures are concatenated with
    /// halved weights, scalar parameters come from `a`.
    pub fn blend(a: &ClassProfile, b: &ClassProfile) -> ClassProfile {
        let half = |c: &MixtureComponent| MixtureComponent { weight: c.weight / 2.0, ..c.clone() };
        ClassProfile { mixture: a.mixture.iter().chain(&b.mixture).map(half).collect(), ..a.clone() }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("profile {name}: {msg}")));
        if self.mixture.is_empty() {
            return bad("empty mixture".into());
        }
        if self.mixture.iter().any(|c| !(c.weight >= 0.0 && c.std >= 0.0 && c.std.is_finite())) {
            return bad("weights and std must be non-negative".into());
        }
        let total: f64 = self.mixture.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("mixture weights sum to {total}, expected 1"));
        }
        let [lo, hi] = self.stop_duration;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("stop_duration bounds [{lo}, {hi}] invalid"));
        }
        if !(self.travel_speed > MIN_TRAVEL_SPEED && self.travel_speed.is_finite()) {
            return bad(format!("travel_speed {} must exceed {MIN_TRAVEL_SPEED} cm/s", self.travel_speed));
        }
        if !(self.inter_stop_rate > 0.0 && self.inter_stop_rate.is_finite()) {
            return bad("inter_stop_rate must be positive".into());
        }
        Ok(())
    }

    /// Draws one stop centre from the mixture, clamped to `[margin, extent - margin]`.
    pub fn sample_location<R: Rng>(&self, layout: &CageLayout, margin: f64, rng: &mut R) -> Point {
        let mut u: f64 = rng.random();
        let mut chosen = self.mixture.last().expect("validated non-empty");
        for c in &self.mixture {
            if u < c.weight {
                chosen = c;
                break;
            }
            u -= c.weight;
        }
        let centre = layout.anchor(chosen.anchor);
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        Point::new(
            (centre.x + chosen.std * dx).clamp(margin, layout.width - margin),
            (centre.y + chosen.std * dy).clamp(margin, layout.height - margin),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfiles {
    pub am: ClassProfile,
    /// `None` means a 50/50 blend of `am` and `jf`.
    #[serde(default)]
    pub jm: Option<ClassProfile>,
    pub af: ClassProfile,
    pub jf: ClassProfile,
}

impl Default for ClassProfiles {
    /// Adult females favour the dome, juvenile females the upper feeder,
    /// adult males the lower border (lower feeder and water).
    fn default() -> Self {
        use Anchor::*;
        ClassProfiles {
            am: ClassProfile::with_mixture(vec![
                MixtureComponent::new(FeederLower, 0.45, 3.0),
                MixtureComponent::new(Water, 0.45, 3.0),
                MixtureComponent::new(Dome, 0.1, 3.0),
            ]),
            jm: None,
            af: ClassProfile::with_mixture(vec![
                MixtureComponent::new(Dome, 0.8, 3.0),
                MixtureComponent::new(FeederUpper, 0.1, 3.0),
                MixtureComponent::new(Water, 0.1, 3.0),
            ]),
            jf: ClassProfile::with_mixture(vec![
                MixtureComponent::new(FeederUpper, 0.6, 3.0),
                MixtureComponent::new(Dome, 0.2, 3.0),
                MixtureComponent::new(Water, 0.2, 3.0),
            ]),
        }
    }
}

impl ClassProfiles {
    pub fn get(&self, class: Stereotype) -> ClassProfile {
        match class {
            Stereotype::AM => self.am.clone(),
            Stereotype::JM => self.jm.clone().unwrap_or_else(|| ClassProfile::blend(&self.am, &self.jf)),
            Stereotype::AF => self.af.clone(),
            Stereotype::JF => self.jf.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cages: usize,
    pub mice_per_cage: usize,
    /// Seconds per recording.
    pub duration: f64,
    pub fps: f64,
    pub rng_seed: u64,
    /// Half-width of the uniform per-axis jitter during stops, cm.
    pub jitter: f64,
    /// Probability that a stop goes to a cage-specific hotspot instead of
    /// the class mixture. Models traits shared by cage mates.
    pub cage_trait: f64,
    /// Fraction of each recording covered by a cage-specific rest window,
    /// placed at a random phase per cage. Stops beginning inside it are
    /// stretched, which shifts stop counts between time bins.
    pub cage_rest: f64,
    pub class_profiles: ClassProfiles,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            cages: 12,
            mice_per_cage: 4,
            duration: 600.0,
            fps: 30.0,
            rng_seed: 0,
            jitter: 0.03,
            cage_trait: 0.0,
            cage_rest: 0.0,
            class_profiles: ClassProfiles::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.cages == 0 || self.mice_per_cage == 0 {
            return Err(Error::Config("cages and mice_per_cage must be at least 1".into()));
        }
        // Worst-case frame-to-frame displacement inside a stop is 2*sqrt(2)*jitter.
        if !(self.jitter >= 0.0 && 2.0 * std::f64::consts::SQRT_2 * self.jitter < 0.1) {
            return Err(Error::Config(format!("jitter {} too large", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.cage_trait) {
            return Err(Error::Config(format!("cage_trait {} outside [0, 1]", self.cage_trait)));
        }
        if !(0.0..=1.0).contains(&self.cage_rest) {
            return Err(Error::Config(format!("cage_rest {} outside [0, 1]", self.cage_rest)));
        }
        for class in Stereotype::ALL {
            self.class_profiles.get(class).validate(class.code())?;
        }
        Ok(())
    }
}

/// A simulated trajectory together with the stops that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrack {
    pub samples: Vec<TrajectorySample>,
    /// Planned stops: first and last frame times and the jitter-free centre.
    pub stops: Vec<StopEvent>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of indices into an independent sub-seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |h, &p| splitmix64(h ^ splitmix64(p)))
}

struct Emitter {
    positions: Vec<(f64, f64)>,
    limit: usize,
}

impl Emitter {
    fn full(&self) -> bool {
        self.positions.len() >= self.limit
    }

    fn push(&mut self, p: (f64, f64)) {
        if !self.full() {
            self.positions.push(p);
        }
    }

    /// Straight leg from `a` to `b` in `floor(d / step)` frames so every
    /// frame covers at least `step`. Emits the endpoint only if `inclusive`.
    fn leg(&mut self, a: Point, b: Point, step: f64, inclusive: bool) {
        let n = ((a.distance(b.x, b.y) / step).floor() as usize).max(1);
        let end = if inclusive { n } else { n - 1 };
        for k in 1..=end {
            let f = k as f64 / n as f64;
            self.push((a.x + (b.x - a.x) * f, a.y + (b.y - a.y) * f));
        }
    }
}

/// Nuisance properties shared by every recording from one cage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CageTraits {
    /// Location used instead of the class mixture with probability
    /// `cage_trait`.
    pub hotspot: Option<Point>,
    /// Start of the rest window, seconds. The window covers `cage_rest` of
    /// the recording and wraps around its end.
    pub rest_start: f64,
}

impl CageTraits {
    /// Draws the traits of one cage.
    pub fn draw(cfg: &SimConfig, layout: &CageLayout, seed: u64) -> CageTraits {
        let hotspot = (cfg.cage_trait > 0.0).then(|| cage_hotspot(layout, derive_seed(seed, &[0])));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        CageTraits { hotspot, rest_start: rng.random_range(0.0..cfg.duration) }
    }

    fn resting(&self, cfg: &SimConfig, t: f64) -> bool {
        let since = (t - self.rest_start).rem_euclid(cfg.duration);
        since < cfg.cage_rest * cfg.duration
    }
}

/// Simulates one recording of `class` in a cage with the given traits.
pub fn simulate_track(
    cfg: &SimConfig,
    layout: &CageLayout,
    class: Stereotype,
    traits: &CageTraits,
    seed: u64,
) -> Result<SimulatedTrack> {
    cfg.validate()?;
    layout.validate()?;
    let profile = cfg.class_profiles.get(class);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roam = Exp::new(profile.inter_stop_rate).map_err(|e| Error::Config(e.to_string()))?;
    let step = profile.travel_speed / cfg.fps;
    let margin = cfg.jitter;
    let (ln_lo, ln_hi) = (profile.stop_duration[0].ln(), profile.stop_duration[1].ln());

    let draw_stop = |rng: &mut ChaCha8Rng| -> Point {
        match traits.hotspot {
            Some(h) if rng.random::<f64>() < cfg.cage_trait => {
                let dx: f64 = rng.sample(StandardNormal);
                let dy: f64 = rng.sample(StandardNormal);
                Point::new(
                    (h.x + CAGE_HOTSPOT_STD * dx).clamp(margin, layout.width - margin),
                    (h.y + CAGE_HOTSPOT_STD * dy).clamp(margin, layout.height - margin),
                )
            }
            _ => profile.sample_location(layout, margin, rng),
        }
    };
    let waypoint = |rng: &mut ChaCha8Rng| {
        Point::new(
            rng.random_range(WAYPOINT_MARGIN..layout.width - WAYPOINT_MARGIN),
            rng.random_range(WAYPOINT_MARGIN..layout.height - WAYPOINT_MARGIN),
        )
    };
    // A waypoint at least two frames away from both `from` and `to`.
    let detour = |rng: &mut ChaCha8Rng, from: Point, to: Option<Point>| loop {
        let w = waypoint(rng);
        if w.distance(from.x, from.y) >= 2.0 * step && to.is_none_or(|t| w.distance(t.x, t.y) >= 2.0 * step) {
            return w;
        }
    };

    let total = (cfg.duration * cfg.fps).round() as usize;
    let mut out = Emitter { positions: Vec::with_capacity(total), limit: total };
    let mut stops = Vec::new();
    let mut centre = draw_stop(&mut rng);
    let t_of = |i: usize| i as f64 / cfg.fps;

    while !out.full() {
        let mut dur = if ln_hi > ln_lo { rng.random_range(ln_lo..ln_hi).exp() } else { ln_lo.exp() };
        if traits.resting(cfg, t_of(out.positions.len())) {
            dur *= REST_STRETCH;
        }
        let frames = ((dur * cfg.fps).round() as usize).max(2);
        let first = out.positions.len();
        for _ in 0..frames {
            let jx = rng.random_range(-1.0..=1.0) * cfg.jitter;
            let jy = rng.random_range(-1.0..=1.0) * cfg.jitter;
            out.push((centre.x + jx, centre.y + jy));
        }
        let last = out.positions.len() - 1;
        stops.push(StopEvent { t_start: t_of(first), t_end: t_of(last), x: centre.x, y: centre.y });
        if out.full() {
            break;
        }

        let next = draw_stop(&mut rng);
        let mut budget = roam.sample(&mut rng);
        let mut here = centre;
        while budget > 0.0 {
            let w = detour(&mut rng, here, None);
            budget -= w.distance(here.x, here.y) / profile.travel_speed;
            out.leg(here, w, step, true);
            here = w;
        }
        if here.distance(next.x, next.y) < 2.0 * step {
            let w = detour(&mut rng, here, Some(next));
            out.leg(here, w, step, true);
            here = w;
        }
        out.leg(here, next, step, false);
        centre = next;
    }

    let samples = out
        .positions
        .into_iter()
        .enumerate()
        .map(|(i, (x, y))| TrajectorySample { t: t_of(i), x, y })
        .collect();
    Ok(SimulatedTrack { samples, stops })
}

/// A uniform point at least [`CAGE_HOTSPOT_CLEARANCE`] from every anchor,
/// or the point farthest from all anchors among the draws if none qualifies.
fn cage_hotspot(layout: &CageLayout, seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clearance = |p: Point| Anchor::ALL.iter().map(|&a| layout.anchor(a).distance(p.x, p.y)).fold(f64::INFINITY, f64::min);
    let mut best = Point::new(layout.width / 2.0, layout.height / 2.0);
    for _ in 0..1000 {
        let p = Point::new(rng.random_range(0.0..layout.width), rng.random_range(0.0..layout.height));
        if clearance(p) >= CAGE_HOTSPOT_CLEARANCE {
            return p;
        }
        if clearance(p) > clearance(best) {
            best = p;
        }
    }
    best
}

/// Simulates every cage x mouse x age session. Even-indexed cages hold
/// males, odd-indexed cages females.
pub fn simulate(cfg: &SimConfig, layout: &CageLayout) -> Result<Vec<Recording>> {
    cfg.validate()?;
    layout.validate()?;
    let mut jobs = Vec::new();
    for cage in 0..cfg.cages {
        for mouse in 0..cfg.mice_per_cage {
            for (session, age) in [Age::Juvenile, Age::Adult].into_iter().enumerate() {
                jobs.push((cage, mouse, session, age));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(cage, mouse, session, age)| {
            let sex = if cage % 2 == 0 { Sex::M } else { Sex::F };
            let traits = CageTraits::draw(cfg, layout, derive_seed(cfg.rng_seed, &[cage as u64, u64::MAX]));
            let seed = derive_seed(cfg.rng_seed, &[cage as u64, mouse as u64, session as u64]);
            let track = simulate_track(cfg, layout, Stereotype::new(sex, age), &traits, seed)?;
            let cage_id = format!("cage{:02}", cage + 1);
            let mouse_id = format!("{cage_id}-m{}", mouse + 1);
            Ok(Recording {
                recording_id: format!("{mouse_id}-{age}"),
                cage_id,
                mouse_id,
                sex,
                age,
                samples: track.samples,
            })
        })
        .collect()
}
