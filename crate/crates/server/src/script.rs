//! Tablet input scripts: synthetic operator drawings of reference shapes.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use avatar_core::metrics::ReferenceShape;
use avatar_core::teleop::TabletSample;

use crate::protocol::ClientMessage;

/// Tablet report rate, Hz.
pub const TABLET_RATE: f64 = 200.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptParams {
    /// Pen speed in normalized paper units per second.
    pub speed: f64,
    pub pressure: f64,
    /// Hover time over each stroke start before pressing.
    pub approach: f64,
    /// Hover time after each stroke before moving on.
    pub lift: f64,
}

impl Default for ScriptParams {
    fn default() -> Self {
        Self { speed: 0.2, pressure: 0.5, approach: 0.5, lift: 0.3 }
    }
}

/// A message due at a session time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedInput {
    pub t: f64,
    pub message: ClientMessage,
}

fn sample(p: (f64, f64), pressure: f64, t: f64) -> TabletSample {
    TabletSample {
        p_tx: p.0.clamp(0.0, 1.0),
        p_ty: p.1.clamp(0.0, 1.0),
        pressure,
        altitude: FRAC_PI_2,
        azimuth: FRAC_PI_2,
        timestamp: t,
    }
}

/// Vertical-pen samples at the tablet rate tracing every stroke of `shape`,
/// hovering between strokes. Times start at zero.
pub fn shape_samples(shape: &ReferenceShape, params: &ScriptParams) -> Vec<TabletSample> {
    let period = 1.0 / TABLET_RATE;
    let mut out = Vec::new();
    let mut k: u64 = 0;
    let mut emit = |p: (f64, f64), pressure: f64, out: &mut Vec<TabletSample>| {
        out.push(sample(p, pressure, k as f64 * period));
        k += 1;
    };
    let hold = |secs: f64| (secs * TABLET_RATE).round() as usize;
    let mut last: Option<(f64, f64)> = None;
    for stroke in shape.strokes.iter().filter(|s| !s.is_empty()) {
        // Hover over to the start of the stroke.
        if let Some(from) = last {
            trace(&[from, stroke[0]], params.speed, period, |p| emit(p, 0.0, &mut out));
        }
        for _ in 0..hold(params.approach) {
            emit(stroke[0], 0.0, &mut out);
        }
        trace(stroke, params.speed, period, |p| emit(p, params.pressure, &mut out));
        let end = *stroke.last().unwrap();
        for _ in 0..hold(params.lift) {
            emit(end, 0.0, &mut out);
        }
        last = Some(end);
    }
    out
}

/// Calls `f` with points spaced `speed·period` apart along the polyline,
/// including both ends.
fn trace(points: &[(f64, f64)], speed: f64, period: f64, mut f: impl FnMut((f64, f64))) {
    let step = speed * period;
    f(points[0]);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 1..=n {
            let s = i as f64 / n as f64;
            f((a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s));
        }
    }
}

/// Full headless input schedule: the first sample and a handshake request at
/// t = 0, then the samples starting once the handshake is over.
pub fn session_inputs(samples: &[TabletSample], start: f64) -> Vec<TimedInput> {
    let mut out = Vec::with_capacity(samples.len() + 2);
    if let Some(first) = samples.first() {
        out.push(TimedInput { t: 0.0, message: ClientMessage::TabletSample(TabletSample { timestamp: 0.0, ..*first }) });
    }
    out.push(TimedInput { t: 0.0, message: ClientMessage::HandshakeStart });
    for s in samples {
        let t = start + s.timestamp;
        out.push(TimedInput { t, message: ClientMessage::TabletSample(TabletSample { timestamp: t, ..*s }) });
    }
    out
}
