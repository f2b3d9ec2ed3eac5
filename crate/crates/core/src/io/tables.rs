use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{KeypointSet, Mat3, MotionParams, NUM_KEYPOINTS};
use crate::trainer::CurvePoint;

#[derive(Serialize, Deserialize)]
struct KeypointRow {
    frame: usize,
    k: usize,
    x: f64,
    y: f64,
    z: f64,
}

fn csv_err(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}

/// One row per keypoint per frame: `frame,k,x,y,z`.
pub fn write_keypoints<W: Write>(w: W, frames: &[KeypointSet]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (frame, kp) in frames.iter().enumerate() {
        for (k, p) in kp.points().iter().enumerate() {
            out.serialize(KeypointRow { frame, k, x: p[0], y: p[1], z: p[2] })
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_keypoints`]. Rows must come in frame-major order with
/// every keypoint present.
pub fn read_keypoints<R: Read>(r: R) -> Result<Vec<KeypointSet>> {
    let mut frames: Vec<KeypointSet> = Vec::new();
    let mut rows = 0;
    for (i, row) in csv::Reader::from_reader(r).deserialize::<KeypointRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        let (frame, k) = (i / NUM_KEYPOINTS, i % NUM_KEYPOINTS);
        if row.frame != frame || row.k != k {
            return Err(Error::format(format!(
                "keypoint row {i}: expected frame {frame} k {k}, got frame {} k {}",
                row.frame, row.k
            )));
        }
        if k == 0 {
            frames.push(KeypointSet::zeros());
        }
        frames[frame][k] = [row.x, row.y, row.z];
        rows += 1;
    }
    if frames.is_empty() {
        return Err(Error::format("no keypoint rows"));
    }
    if rows != frames.len() * NUM_KEYPOINTS {
        return Err(Error::format(format!("last frame has {} of {NUM_KEYPOINTS} keypoints", rows % NUM_KEYPOINTS)));
    }
    if !frames.iter().all(KeypointSet::is_finite) {
        return Err(Error::format("non-finite keypoint"));
    }
    Ok(frames)
}

/// Column names of the motion table.
pub const MOTION_COLUMNS: &str = "frame, scale, r00..r22 (row-major rotation), tx, ty, tz, \
                                  e{k}_{x,y,z} expression offsets for k = 0..20";

fn motion_header() -> Vec<String> {
    let mut h = vec!["frame".to_string(), "scale".to_string()];
    for i in 0..3 {
        for j in 0..3 {
            h.push(format!("r{i}{j}"));
        }
    }
    h.extend(["tx", "ty", "tz"].map(String::from));
    for k in 0..NUM_KEYPOINTS {
        for c in ["x", "y", "z"] {
            h.push(format!("e{k}_{c}"));
        }
    }
    h
}

/// One row per frame. Values are written in shortest round-trip form, so
/// reading them back is exact.
pub fn write_motion<W: Write>(w: W, frames: &[MotionParams]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(motion_header()).map_err(csv_err)?;
    for (frame, p) in frames.iter().enumerate() {
        let mut rec = vec![frame.to_string(), p.scale.to_string()];
        rec.extend(p.rotation.flatten().iter().map(f64::to_string));
        rec.extend(p.translation.iter().map(f64::to_string));
        rec.extend(p.expression.flatten().iter().map(f64::to_string));
        out.write_record(rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_motion`]; every frame is validated.
pub fn read_motion<R: Read>(r: R) -> Result<Vec<MotionParams>> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != motion_header() {
        return Err(Error::format("motion table header does not match the expected columns"));
    }
    let mut frames = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("motion row {i}: bad number {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if v[0] != i as f64 {
            return Err(Error::format(format!("motion row {i} has frame {}", v[0])));
        }
        let rotation = Mat3([[v[2], v[3], v[4]], [v[5], v[6], v[7]], [v[8], v[9], v[10]]]);
        let p = MotionParams::new(
            v[1],
            rotation,
            KeypointSet::from_flat(&v[14..])?,
            [v[11], v[12], v[13]],
        )?;
        frames.push(p);
    }
    if frames.is_empty() {
        return Err(Error::format("no motion rows"));
    }
    Ok(frames)
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    consistency: f64,
    condition: f64,
    regularization: f64,
    total: f64,
}

/// Loss curve: `step,consistency,condition,regularization,total`.
pub fn write_curve<W: Write>(w: W, curve: &[CurvePoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for p in curve {
        out.serialize(CurveRow {
            step: p.step,
            consistency: p.terms.consistency,
            condition: p.terms.condition,
            regularization: p.terms.regularization,
            total: p.terms.total,
        })
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{euler_to_rotation, EulerAngles};

    fn motion(i: f64) -> MotionParams {
        let mut e = KeypointSet::zeros();
        e[3] = [0.1 * i, -1.0 / 3.0, 2e-17];
        MotionParams::new(
            1.0 + 0.01 * i,
            euler_to_rotation(EulerAngles::new(3.0 * i, -7.0, 0.3)),
            e,
            [0.1, -0.2, i],
        )
        .unwrap()
    }

    #[test]
    fn motion_round_trip_is_exact() {
        let frames: Vec<_> = (0..3).map(|i| motion(i as f64)).collect();
        let mut buf = Vec::new();
        write_motion(&mut buf, &frames).unwrap();
        assert_eq!(read_motion(&buf[..]).unwrap(), frames);
    }

    #[test]
    fn keypoint_round_trip_and_order() {
        let frames = vec![motion(1.0).expression, motion(2.0).expression];
        let mut buf = Vec::new();
        write_keypoints(&mut buf, &frames).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("frame,k,x,y,z\n0,0,"));
        assert_eq!(read_keypoints(&buf[..]).unwrap(), frames);

        let text = "frame,k,x,y,z\n0,1,0,0,0\n";
        assert!(matches!(read_keypoints(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_rotation_is_rejected() {
        let mut buf = Vec::new();
        write_motion(&mut buf, &[motion(0.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
        fields[2] = "2".into();
        lines[1] = fields.join(",");
        assert!(read_motion(lines.join("\n").as_bytes()).is_err());
    }
}
