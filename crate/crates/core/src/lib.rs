//! Attention-intervention toolkit.
//!
//! * [`audio`]: chunked real-time audio perturbation (gain, pitch shift, beep alert).
//! * [`scheduler`]: intervention episodes, on/off cycling, blinded condition assignment
//!   and the append-only session log.
//! * [`sensor`]: head pose from facial landmarks, calibration, off-screen judgment and
//!   debouncing.
//! * [`control`]: wire messages, routing with blinding, session driver and the
//!   WebSocket server.
//! * [`analytics`]: episode extraction, interval metrics, confusion matrix and the
//!   hypothesis-test toolkit.
//! * [`sim`]: deterministic synthetic sessions for desk-scale testing.

pub mod analytics;
pub mod audio;
pub mod control;
pub mod scheduler;
pub mod sensor;
pub mod sim;
