//! Reading and replaying traffic captures.
//!
//! A capture line is `ok <envelope>` or `lost <envelope>`, one per send, in
//! send order.

use std::collections::BTreeMap;
use std::path::Path;

use rollsurf_core::{MotorSpec, RollId, Scene};

use crate::codec::{DecodeError, Envelope, Message};
use crate::nodes::{panel_node, PanelState};
use crate::NetError;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub delivered: bool,
    pub env: Envelope,
}

pub fn parse_capture(text: &str) -> Result<Vec<CaptureRecord>, DecodeError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end();
        if !body.is_empty() {
            let (flag, rest) = body.split_once(' ').unwrap_or((body, ""));
            let delivered = match flag {
                "ok" => true,
                "lost" => false,
                _ => {
                    return Err(DecodeError {
                        offset,
                        kind: crate::codec::DecodeErrorKind::UnknownKind(flag.to_string()),
                    })
                }
            };
            let env = Envelope::decode(rest).map_err(|mut e| {
                e.offset += offset + flag.len() + 1;
                e
            })?;
            out.push(CaptureRecord { delivered, env });
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn read_capture(path: &Path) -> Result<Vec<CaptureRecord>, NetError> {
    Ok(parse_capture(&std::fs::read_to_string(path)?)?)
}

/// Re-drives fresh panels with every delivered command in the capture and
/// returns the resulting roll lengths.
pub fn replay_surface(records: &[CaptureRecord], scene: &Scene, motor: MotorSpec) -> BTreeMap<RollId, u32> {
    let mut panels: BTreeMap<u32, PanelState> =
        scene.panels.iter().map(|p| (p.id, PanelState::new(p, motor))).collect();
    for r in records.iter().filter(|r| r.delivered) {
        if let Message::SetLength {
            panel_id,
            roll_id,
            target_mm,
            epoch,
        } = r.env.msg
        {
            if r.env.dst != panel_node(panel_id) {
                continue;
            }
            if let Some(p) = panels.get_mut(&panel_id) {
                p.handle_set(roll_id, target_mm, epoch);
            }
        }
    }
    panels
        .values()
        .flat_map(|p| p.lengths_mm().iter().map(|(&i, &mm)| (RollId::new(p.panel_id, i), mm)))
        .collect()
}
