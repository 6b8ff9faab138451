pub mod circuits;
pub mod cli;
pub mod grape;
pub mod hamiltonian;
pub mod hilbert;
pub mod readout;
