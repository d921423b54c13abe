//! Versioned plain-text dataset file.
//!
//! ```text
//! helipad-dataset 1
//! [world]
//! gravity <gx> <gy> <gz>
//! [camera]
//! focal <f>
//! principal_point <cx> <cy>
//! [timing]
//! samples_per_frame <k>
//! [landmarks] <N>
//! <id> <x> <y> <z>
//! [keyframes] <n>
//! <frame> <R row-major, 9 values> <vx> <vy> <vz> <px> <py> <pz>
//! [imu] <count>
//! <wx> <wy> <wz> <ax> <ay> <az> <dt>
//! [measurements] <count>
//! <frame> <landmark> <u> <v>
//! [dropped] <count>
//! <frame> <landmark>
//! ```
//!
//! Numbers are written with Rust's shortest round-trip decimal formatting, so
//! reading a file back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use helipad_core::sim::Dataset;
use helipad_core::{
    CameraModel, ImuSample, PixelMeasurement, PoseState, Rotation, WindowState, WorldParams,
};
use nalgebra::{Matrix3, Vector2, Vector3};

/// First line of every dataset file.
pub const HEADER: &str = "helipad-dataset 1";

/// Problems reading a dataset file.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    /// Filesystem error.
    #[error("{0}")]
    Io(#[from] std::io::Error),
    /// Malformed content.
    #[error("line {line}: {message}")]
    Syntax {
        /// One-based line number.
        line: usize,
        /// What was expected.
        message: String,
    },
    /// Well-formed but inconsistent content.
    #[error("invalid dataset: {0}")]
    Invalid(#[from] helipad_core::Error),
}

fn join(xs: impl IntoIterator<Item = f64>) -> String {
    xs.into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders a dataset as text.
pub fn to_string(d: &Dataset) -> String {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "{HEADER}");
    let _ = writeln!(
        w,
        "[world]\ngravity {}",
        join(d.world.gravity.iter().copied())
    );
    let _ = writeln!(
        w,
        "[camera]\nfocal {}\nprincipal_point {}",
        d.cam.focal,
        join(d.cam.principal_point.iter().copied())
    );
    let _ = writeln!(w, "[timing]\nsamples_per_frame {}", d.samples_per_frame);
    let truth = &d.ground_truth;
    let _ = writeln!(w, "[landmarks] {}", truth.landmark_count());
    for (i, l) in truth.landmarks.iter().enumerate() {
        let _ = writeln!(w, "{} {}", i + 1, join(l.iter().copied()));
    }
    let _ = writeln!(w, "[keyframes] {}", truth.pose_count());
    for (i, p) in truth.poses.iter().enumerate() {
        let r = p.rotation.matrix();
        let rows = (0..3).flat_map(|a| (0..3).map(move |b| r[(a, b)]));
        let _ = writeln!(
            w,
            "{} {} {} {}",
            i + 1,
            join(rows),
            join(p.velocity.iter().copied()),
            join(p.position.iter().copied())
        );
    }
    let _ = writeln!(w, "[imu] {}", d.imu_samples.len());
    for s in &d.imu_samples {
        let _ = writeln!(
            w,
            "{}",
            join(s.omega.iter().chain(s.accel.iter()).copied().chain([s.dt]))
        );
    }
    let _ = writeln!(w, "[measurements] {}", d.pixel_measurements.len());
    for m in &d.pixel_measurements {
        let _ = writeln!(
            w,
            "{} {} {}",
            m.frame_index,
            m.landmark_id,
            join(m.uv.iter().copied())
        );
    }
    let _ = writeln!(w, "[dropped] {}", d.dropped.len());
    for (f, l) in &d.dropped {
        let _ = writeln!(w, "{f} {l}");
    }
    out
}

/// Writes a dataset file.
pub fn write(path: &Path, d: &Dataset) -> std::io::Result<()> {
    std::fs::write(path, to_string(d))
}

/// Reads a dataset file.
pub fn read(path: &Path) -> Result<Dataset, FormatError> {
    parse(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> FormatError {
        FormatError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    fn next_fields(&mut self) -> Result<Vec<&'a str>, FormatError> {
        loop {
            let (i, raw) = self.inner.next().ok_or_else(|| FormatError::Syntax {
                line: self.line + 1,
                message: "unexpected end of file".into(),
            })?;
            self.line = i + 1;
            let text = raw.trim();
            if !text.is_empty() {
                return Ok(text.split_whitespace().collect());
            }
        }
    }

    fn keyed(&mut self, key: &str, count: usize) -> Result<Vec<f64>, FormatError> {
        let f = self.next_fields()?;
        if f.first() != Some(&key) || f.len() != count + 1 {
            return Err(self.err(format!("expected `{key}` followed by {count} numbers")));
        }
        self.numbers(&f[1..])
    }

    fn section(&mut self, name: &str) -> Result<usize, FormatError> {
        let f = self.next_fields()?;
        let tag = format!("[{name}]");
        match f.as_slice() {
            [t] if *t == tag => Ok(0),
            [t, n] if *t == tag => n.parse().map_err(|_| self.err(format!("bad count `{n}`"))),
            _ => Err(self.err(format!("expected section {tag}"))),
        }
    }

    fn numbers(&self, f: &[&str]) -> Result<Vec<f64>, FormatError> {
        f.iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| self.err(format!("bad number `{s}`")))
            })
            .collect()
    }

    fn index(&self, s: &str, expected: usize) -> Result<usize, FormatError> {
        match s.parse::<usize>() {
            Ok(v) if v == expected || expected == 0 => Ok(v),
            _ => Err(self.err(format!("bad index `{s}`"))),
        }
    }

    fn row(&mut self, width: usize) -> Result<Vec<&'a str>, FormatError> {
        let f = self.next_fields()?;
        if f.len() != width {
            return Err(self.err(format!("expected {width} fields, found {}", f.len())));
        }
        Ok(f)
    }
}

/// Parses dataset text.
pub fn parse(text: &str) -> Result<Dataset, FormatError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let head = lines.next_fields()?;
    if head.join(" ") != HEADER {
        return Err(lines.err(format!("expected header `{HEADER}`")));
    }

    lines.section("world")?;
    let g = lines.keyed("gravity", 3)?;
    let world = WorldParams {
        gravity: Vector3::new(g[0], g[1], g[2]),
    };

    lines.section("camera")?;
    let focal = lines.keyed("focal", 1)?[0];
    let pp = lines.keyed("principal_point", 2)?;
    let cam = CameraModel {
        focal,
        principal_point: Vector2::new(pp[0], pp[1]),
    };
    cam.validate()?;

    lines.section("timing")?;
    let samples_per_frame = {
        let f = lines.row(2)?;
        if f[0] != "samples_per_frame" {
            return Err(lines.err("expected `samples_per_frame <k>`"));
        }
        lines.index(f[1], 0)?
    };

    let n_landmarks = lines.section("landmarks")?;
    let mut landmarks = Vec::with_capacity(n_landmarks);
    for i in 0..n_landmarks {
        let f = lines.row(4)?;
        lines.index(f[0], i + 1)?;
        let v = lines.numbers(&f[1..])?;
        landmarks.push(Vector3::new(v[0], v[1], v[2]));
    }

    let n_frames = lines.section("keyframes")?;
    let mut poses = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let f = lines.row(16)?;
        lines.index(f[0], i + 1)?;
        let v = lines.numbers(&f[1..])?;
        let rotation = Rotation::from_matrix(Matrix3::from_row_slice(&v[0..9]))?;
        poses.push(PoseState::new(
            rotation,
            Vector3::new(v[9], v[10], v[11]),
            Vector3::new(v[12], v[13], v[14]),
        ));
    }
    let ground_truth = WindowState::new(poses, landmarks)?;

    let n_imu = lines.section("imu")?;
    let mut imu_samples = Vec::with_capacity(n_imu);
    for _ in 0..n_imu {
        let f = lines.row(7)?;
        let v = lines.numbers(&f)?;
        let s = ImuSample::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
            v[6],
        );
        s.validate()?;
        imu_samples.push(s);
    }

    let n_meas = lines.section("measurements")?;
    let mut pixel_measurements = Vec::with_capacity(n_meas);
    for _ in 0..n_meas {
        let f = lines.row(4)?;
        let frame_index = lines.index(f[0], 0)?;
        let landmark_id = lines.index(f[1], 0)?;
        let uv = lines.numbers(&f[2..])?;
        pixel_measurements.push(PixelMeasurement {
            frame_index,
            landmark_id,
            uv: Vector2::new(uv[0], uv[1]),
        });
    }

    let n_dropped = lines.section("dropped")?;
    let mut dropped = Vec::with_capacity(n_dropped);
    for _ in 0..n_dropped {
        let f = lines.row(2)?;
        dropped.push((lines.index(f[0], 0)?, lines.index(f[1], 0)?));
    }

    let d = Dataset {
        ground_truth,
        imu_samples,
        samples_per_frame,
        pixel_measurements,
        cam,
        world,
        dropped,
    };
    // factor and index consistency
    d.problem(d.ground_truth.clone())?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use helipad_core::sim::Scenario;

    #[test]
    fn round_trip_is_exact() {
        let d = Scenario::reference(5).generate().unwrap();
        let text = to_string(&d);
        assert!(text.starts_with("helipad-dataset 1\n[world]\ngravity 0 0 9.81\n"));
        let back = parse(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(to_string(&back), text);
    }

    #[test]
    fn reports_line_of_error() {
        let d = Scenario::reference(5).generate().unwrap();
        let text = to_string(&d).replacen("focal 1", "focal x", 1);
        match parse(&text) {
            Err(FormatError::Syntax { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("nonsense"),
            Err(FormatError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_truncated_file() {
        let d = Scenario::reference(5).generate().unwrap();
        let text = to_string(&d);
        let cut = &text[..text.len() / 2];
        assert!(parse(cut).is_err());
    }

    #[test]
    fn rejects_wrong_imu_count() {
        let mut d = Scenario::reference(5).generate().unwrap();
        d.imu_samples.pop();
        assert!(matches!(
            parse(&to_string(&d)),
            Err(FormatError::Invalid(_))
        ));
    }
}
