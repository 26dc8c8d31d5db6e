use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Multiply-adds per token per channel of a 5x5 depthwise shift.
const SHIFT_PER_BRANCH: u64 = 25;
/// A Bi-RWKV block shifts in both the spatial and the channel branch.
const SHIFT_BRANCHES: u64 = 2;
const AFT_SIMPLE: u64 = 7;
const BIWKV: u64 = 29;
const WINDOW: u64 = 8;
const SSM_STATE: u64 = 16;
const SSM_PER_STATE: u64 = 9;
const SS2D_DIRECTIONS: u64 = 4;

/// Token mixers covered by the theoretical operation-count model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Aft,
    AftShift,
    BiwkvShift,
    WindowAttention,
    SelectiveScan,
    SelectiveScan2D,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::Aft,
        Mechanism::AftShift,
        Mechanism::BiwkvShift,
        Mechanism::WindowAttention,
        Mechanism::SelectiveScan,
        Mechanism::SelectiveScan2D,
    ];

    /// Operations per unit of `L * D`.
    pub const fn coefficient(self) -> u64 {
        let shift = SHIFT_PER_BRANCH * SHIFT_BRANCHES;
        match self {
            Mechanism::Aft => AFT_SIMPLE,
            Mechanism::AftShift => AFT_SIMPLE + shift,
            Mechanism::BiwkvShift => BIWKV + shift,
            Mechanism::WindowAttention => 2 * WINDOW * WINDOW,
            Mechanism::SelectiveScan => SSM_PER_STATE * SSM_STATE,
            Mechanism::SelectiveScan2D => SS2D_DIRECTIONS * SSM_PER_STATE * SSM_STATE,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Mechanism::Aft => "aft",
            Mechanism::AftShift => "aft+shift",
            Mechanism::BiwkvShift => "biwkv+shift",
            Mechanism::WindowAttention => "window",
            Mechanism::SelectiveScan => "selective-scan",
            Mechanism::SelectiveScan2D => "selective-scan-2d",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "-");
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .or(match key.as_str() {
                "window-attention" => Some(Mechanism::WindowAttention),
                "ss2d" => Some(Mechanism::SelectiveScan2D),
                "mamba" => Some(Mechanism::SelectiveScan),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mechanism `{s}`")))
    }
}

/// Theoretical operation count for a length-`l`, width-`d` sequence.
pub fn op_count(mechanism: Mechanism, l: u64, d: u64) -> Result<u64> {
    if l == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "op_count needs L, D >= 1 (got L={l}, D={d})"
        )));
    }
    Ok(mechanism.coefficient() * l * d)
}
