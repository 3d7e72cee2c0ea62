use serde::{Deserialize, Serialize};

/// Operation counts recorded while a forward pass runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTrace {
    /// Multiply-accumulates in linear layers, attention products and the
    /// patch projection.
    pub macs: u64,
    pub gathers: u64,
    pub scatters: u64,
    /// Tokens fed to the first block.
    pub tokens_processed: usize,
}

impl OpTrace {
    pub fn scatter_gather_ops(&self) -> u64 {
        self.gathers + self.scatters
    }

    pub(crate) fn add_macs(&mut self, n: usize) {
        self.macs += n as u64;
    }
}
