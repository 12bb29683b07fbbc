use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttentionLabel, HeadPose, Result, SensorError};

/// Per-user angular range that counts as looking at the screen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub yaw_min: f64,
    pub yaw_max: f64,
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub captured_at: f64,
}

impl CalibrationProfile {
    pub fn new(yaw: (f64, f64), pitch: (f64, f64), captured_at: f64) -> Result<Self> {
        let profile = Self {
            yaw_min: yaw.0,
            yaw_max: yaw.1,
            pitch_min: pitch.0,
            pitch_max: pitch.1,
            captured_at,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.yaw_min.partial_cmp(&self.yaw_max) != Some(std::cmp::Ordering::Less) {
            return Err(SensorError::DegenerateCalibration(format!(
                "yaw range [{}, {}] is empty",
                self.yaw_min, self.yaw_max
            )));
        }
        if self.pitch_min.partial_cmp(&self.pitch_max) != Some(std::cmp::Ordering::Less) {
            return Err(SensorError::DegenerateCalibration(format!(
                "pitch range [{}, {}] is empty",
                self.pitch_min, self.pitch_max
            )));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let profile: Self = serde_json::from_str(&text).map_err(|e| SensorError::Parse {
            line: e.line(),
            reason: e.to_string(),
        })?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("profile serializes");
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Componentwise min/max of yaw and pitch over poses collected while the user follows a
/// target around the screen edge.
pub fn calibrate(poses: &[HeadPose], captured_at: f64) -> Result<CalibrationProfile> {
    let first = poses.first().ok_or(SensorError::EmptyCalibration)?;
    let mut profile = CalibrationProfile {
        yaw_min: first.yaw,
        yaw_max: first.yaw,
        pitch_min: first.pitch,
        pitch_max: first.pitch,
        captured_at,
    };
    for p in &poses[1..] {
        profile.yaw_min = profile.yaw_min.min(p.yaw);
        profile.yaw_max = profile.yaw_max.max(p.yaw);
        profile.pitch_min = profile.pitch_min.min(p.pitch);
        profile.pitch_max = profile.pitch_max.max(p.pitch);
    }
    profile.validate()?;
    Ok(profile)
}

/// Attentive iff yaw and pitch both lie in the calibrated ranges, bounds included.
pub fn judge(pose: &HeadPose, profile: &CalibrationProfile) -> AttentionLabel {
    let yaw_ok = (profile.yaw_min..=profile.yaw_max).contains(&pose.yaw);
    let pitch_ok = (profile.pitch_min..=profile.pitch_max).contains(&pose.pitch);
    if yaw_ok && pitch_ok {
        AttentionLabel::Attentive
    } else {
        AttentionLabel::Distracted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(yaw: f64, pitch: f64) -> HeadPose {
        HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, 600.0])
    }

    #[test]
    fn min_max_of_sweep() {
        let poses = [pose(-22.0, 0.0), pose(5.0, -15.0), pose(28.0, 10.0)];
        let p = calibrate(&poses, 3.0).unwrap();
        assert_eq!((p.yaw_min, p.yaw_max, p.pitch_min, p.pitch_max), (-22.0, 28.0, -15.0, 10.0));
        assert_eq!(p.captured_at, 3.0);
    }

    #[test]
    fn static_head_is_degenerate() {
        let poses = vec![pose(3.0, 4.0); 10];
        assert!(matches!(
            calibrate(&poses, 0.0),
            Err(SensorError::DegenerateCalibration(_))
        ));
        assert!(matches!(calibrate(&[], 0.0), Err(SensorError::EmptyCalibration)));
    }

    #[test]
    fn inner_pose_leaves_profile_unchanged() {
        let mut poses = vec![pose(-22.0, -15.0), pose(28.0, 10.0)];
        let before = calibrate(&poses, 0.0).unwrap();
        poses.push(pose(1.0, 2.0));
        assert_eq!(calibrate(&poses, 0.0).unwrap(), before);
    }

    #[test]
    fn judgment_examples() {
        let profile = CalibrationProfile::new((-30.0, 30.0), (-20.0, 15.0), 0.0).unwrap();
        assert_eq!(judge(&pose(35.0, 0.0), &profile), AttentionLabel::Distracted);
        assert_eq!(judge(&pose(30.0, 0.0), &profile), AttentionLabel::Attentive);
        assert_eq!(judge(&pose(0.0, -20.0), &profile), AttentionLabel::Attentive);
        assert_eq!(judge(&pose(0.0, -20.1), &profile), AttentionLabel::Distracted);
        assert_eq!(judge(&pose(3.0, 3.0), &profile), AttentionLabel::Attentive);
    }

    #[test]
    fn profile_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.json");
        let profile = CalibrationProfile::new((-21.5, 27.25), (-14.0, 9.5), 12.0).unwrap();
        profile.write(&path).unwrap();
        assert_eq!(CalibrationProfile::read(&path).unwrap(), profile);
    }

    proptest! {
        #[test]
        fn enlarging_profile_never_loses_attentive(
            yaw in -60.0f64..60.0, pitch in -60.0f64..60.0,
            grow in proptest::array::uniform4(0.0f64..20.0),
        ) {
            let small = CalibrationProfile::new((-20.0, 25.0), (-15.0, 10.0), 0.0).unwrap();
            let big = CalibrationProfile::new(
                (-20.0 - grow[0], 25.0 + grow[1]),
                (-15.0 - grow[2], 10.0 + grow[3]),
                0.0,
            ).unwrap();
            let p = pose(yaw, pitch);
            if judge(&p, &small) == AttentionLabel::Attentive {
                prop_assert_eq!(judge(&p, &big), AttentionLabel::Attentive);
            }
        }
    }
}
