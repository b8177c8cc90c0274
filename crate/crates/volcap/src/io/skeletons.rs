//! Skeleton streams: line-delimited JSON with a leading header record,
//! then one frame record per line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::skeleton::SkeletonFrame;

/// One frame of a skeleton stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonRecord {
    pub frame: u64,
    /// Seconds since the start of the capture.
    pub time: f64,
    pub joints: Vec<[f64; 3]>,
}

impl SkeletonRecord {
    pub fn skeleton(&self) -> SkeletonFrame {
        SkeletonFrame::new(self.joints.clone())
    }
}

/// A stream of per-frame joint positions with its joint-map metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonStream {
    pub joint_count: usize,
    pub joint_names: Option<Vec<String>>,
    pub provenance: Option<serde_json::Value>,
    pub records: Vec<SkeletonRecord>,
}

impl SkeletonStream {
    pub fn new(joint_count: usize) -> Self {
        SkeletonStream {
            joint_count,
            joint_names: None,
            provenance: None,
            records: Vec::new(),
        }
    }

    pub fn frames(&self) -> Vec<SkeletonFrame> {
        self.records.iter().map(|r| r.skeleton()).collect()
    }

    pub fn push(&mut self, frame: u64, time: f64, skeleton: &SkeletonFrame) {
        debug_assert_eq!(skeleton.joint_count(), self.joint_count);
        self.records.push(SkeletonRecord {
            frame,
            time,
            joints: skeleton.joints.clone(),
        });
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Header {
        version: u32,
        joint_count: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        joint_names: Option<Vec<String>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        provenance: Option<serde_json::Value>,
    },
    Frame {
        frame: u64,
        time: f64,
        joints: Vec<[f64; 3]>,
    },
}

pub fn write_skeletons(path: impl AsRef<Path>, stream: &SkeletonStream) -> Result<(), IoError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |line: &Line| -> Result<(), IoError> {
        serde_json::to_writer(&mut w, line)
            .map_err(|e| IoError::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))
    };
    emit(&Line::Header {
        version: 1,
        joint_count: stream.joint_count,
        joint_names: stream.joint_names.clone(),
        provenance: stream.provenance.clone(),
    })?;
    for r in &stream.records {
        emit(&Line::Frame {
            frame: r.frame,
            time: r.time,
            joints: r.joints.clone(),
        })?;
    }
    Ok(())
}

pub fn read_skeletons(path: impl AsRef<Path>) -> Result<SkeletonStream, IoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut stream: Option<SkeletonStream> = None;
    let mut last_frame: Option<u64> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| IoError::SchemaViolation {
                path: path.into(),
                line: line_no,
                message: e.to_string(),
            })?;
        match parsed {
            Line::Header {
                version,
                joint_count,
                joint_names,
                provenance,
            } => {
                if stream.is_some() {
                    return Err(IoError::SchemaViolation {
                        path: path.into(),
                        line: line_no,
                        message: "duplicate header record".into(),
                    });
                }
                if version != 1 {
                    return Err(IoError::SchemaViolation {
                        path: path.into(),
                        line: line_no,
                        message: format!("unsupported version {version}"),
                    });
                }
                if let Some(names) = &joint_names {
                    if names.len() != joint_count {
                        return Err(IoError::SchemaViolation {
                            path: path.into(),
                            line: line_no,
                            message: format!(
                                "{} joint names for joint_count {joint_count}",
                                names.len()
                            ),
                        });
                    }
                }
                stream = Some(SkeletonStream {
                    joint_count,
                    joint_names,
                    provenance,
                    records: Vec::new(),
                });
            }
            Line::Frame {
                frame,
                time,
                joints,
            } => {
                let s = stream.as_mut().ok_or_else(|| IoError::SchemaViolation {
                    path: path.into(),
                    line: line_no,
                    message: "frame record before header".into(),
                })?;
                if joints.len() != s.joint_count {
                    return Err(IoError::SchemaViolation {
                        path: path.into(),
                        line: line_no,
                        message: format!(
                            "frame has {} joints, header declares {}",
                            joints.len(),
                            s.joint_count
                        ),
                    });
                }
                if let Some(prev) = last_frame {
                    if frame <= prev {
                        return Err(IoError::SchemaViolation {
                            path: path.into(),
                            line: line_no,
                            message: format!(
                                "frame indices must strictly increase: {frame} after {prev}"
                            ),
                        });
                    }
                }
                if joints.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(IoError::SchemaViolation {
                        path: path.into(),
                        line: line_no,
                        message: "non-finite joint coordinate".into(),
                    });
                }
                last_frame = Some(frame);
                s.records.push(SkeletonRecord {
                    frame,
                    time,
                    joints,
                });
            }
        }
    }
    stream.ok_or_else(|| IoError::SchemaViolation {
        path: path.into(),
        line: 0,
        message: "missing header record".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_round_trips_with_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let stream = SkeletonStream::new(26);
        write_skeletons(&path, &stream).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let back = read_skeletons(&path).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn stream_round_trips_and_carries_3j_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let mut stream = SkeletonStream::new(26);
        for f in 0..3u64 {
            let frame = SkeletonFrame::new(
                (0..26)
                    .map(|j| [j as f64, f as f64 * 10.0, 1000.0])
                    .collect(),
            );
            stream.push(f, f as f64 / 25.0, &frame);
        }
        write_skeletons(&path, &stream).unwrap();
        let back = read_skeletons(&path).unwrap();
        assert_eq!(back, stream);
        for r in &back.records {
            assert_eq!(r.skeleton().to_flat().len(), 78);
        }
    }

    #[test]
    fn non_monotone_frames_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let text = concat!(
            "{\"type\":\"header\",\"version\":1,\"joint_count\":1}\n",
            "{\"type\":\"frame\",\"frame\":2,\"time\":0.0,\"joints\":[[0,0,0]]}\n",
            "{\"type\":\"frame\",\"frame\":2,\"time\":0.1,\"joints\":[[0,0,0]]}\n",
        );
        std::fs::write(&path, text).unwrap();
        match read_skeletons(&path) {
            Err(IoError::SchemaViolation { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn wrong_joint_count_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let text = concat!(
            "{\"type\":\"header\",\"version\":1,\"joint_count\":2}\n",
            "{\"type\":\"frame\",\"frame\":1,\"time\":0.0,\"joints\":[[0,0,0]]}\n",
        );
        std::fs::write(&path, text).unwrap();
        match read_skeletons(&path) {
            Err(IoError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected SchemaViolation, got {other:?}"),
        }
    }

    #[test]
    fn missing_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        std::fs::write(
            &path,
            "{\"type\":\"frame\",\"frame\":1,\"time\":0.0,\"joints\":[[0,0,0]]}\n",
        )
        .unwrap();
        assert!(matches!(
            read_skeletons(&path),
            Err(IoError::SchemaViolation { line: 1, .. })
        ));
    }
}
