use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::message::{Body, ClientEffect, EpisodeReveal, Message};
use super::{ControlError, Result, Role};
use crate::scheduler::{
    AnnotationMark, Condition, EventKind, InterventionMode, PartSpec, Scheduler, SchedulerConfig,
    SessionEvent, SessionLog, TriggerMode,
};
use crate::sensor::{calibrate, AttentionLabel, CalibrationProfile, HeadPose};

pub type ConnId = u64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub parts: Vec<PartSpec>,
    pub blinded: bool,
}

impl SessionDescriptor {
    /// Parts in the given mode order, each lasting `duration` seconds.
    pub fn with_modes(
        session_id: impl Into<String>,
        modes: &[InterventionMode],
        duration: f64,
        blinded: bool,
    ) -> Result<Self> {
        let d = Self {
            session_id: session_id.into(),
            parts: modes
                .iter()
                .enumerate()
                .map(|(part_id, &mode)| PartSpec {
                    part_id,
                    mode,
                    duration,
                })
                .collect(),
            blinded,
        };
        d.validate()?;
        Ok(d)
    }

    /// One of the six orders of the three modes, chosen uniformly from `seed`.
    pub fn random_order(
        session_id: impl Into<String>,
        seed: u64,
        duration: f64,
        blinded: bool,
    ) -> Result<Self> {
        let mut modes = InterventionMode::ALL;
        modes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::with_modes(session_id, &modes, duration, blinded)
    }

    pub fn validate(&self) -> Result<()> {
        if self.session_id.is_empty()
            || !self
                .session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(ControlError::InvalidSession(format!(
                "session id `{}` must be non-empty [A-Za-z0-9_-]",
                self.session_id
            )));
        }
        if self.parts.is_empty() {
            return Err(ControlError::InvalidSession("no parts".into()));
        }
        for (i, p) in self.parts.iter().enumerate() {
            if p.part_id != i {
                return Err(ControlError::InvalidSession(format!(
                    "part {i} has id {}",
                    p.part_id
                )));
            }
            if !(p.duration.is_finite() && p.duration > 0.0) {
                return Err(ControlError::InvalidSession(format!(
                    "part {i} duration {} is not positive",
                    p.duration
                )));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.parts.iter().map(|p| p.duration).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub descriptor: SessionDescriptor,
    pub trigger: TriggerMode,
    pub seed: u64,
    pub toggle_period: f64,
    pub treatment_probability: f64,
    pub pattern_per_cycle: bool,
}

impl SessionConfig {
    pub fn new(descriptor: SessionDescriptor, trigger: TriggerMode, seed: u64) -> Self {
        let d = SchedulerConfig::default();
        Self {
            descriptor,
            trigger,
            seed,
            toggle_period: d.toggle_period,
            treatment_probability: d.treatment_probability,
            pattern_per_cycle: d.pattern_per_cycle,
        }
    }

    /// Scheduler settings for this session. Auto sessions intervene on every detected
    /// distraction; manual sessions randomise each episode's condition.
    pub fn scheduler_config(&self) -> SchedulerConfig {
        SchedulerConfig {
            toggle_period: self.toggle_period,
            treatment_probability: self.treatment_probability,
            mode: self.descriptor.parts[0].mode,
            rng_seed: self.seed,
            randomize_condition: self.trigger == TriggerMode::Manual,
            pattern_per_cycle: self.pattern_per_cycle,
        }
    }
}

/// A frame to send on a connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub conn: ConnId,
    pub to: Option<Role>,
    pub message: Message,
}

#[derive(Debug, Default)]
struct Conn {
    role: Option<Role>,
    last_seq: Option<u64>,
    last_t: Option<f64>,
    out_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Waiting,
    Running { started_at: f64, part: usize },
    Ended,
}

/// Routing state machine for one session.
///
/// Pure and clock-free: every entry point takes the server receipt time, which must be
/// non-decreasing across calls. Part boundaries and toggle times are logged at their exact
/// scheduled times, before anything received later.
#[derive(Debug)]
pub struct ControlSession {
    config: SessionConfig,
    scheduler: Scheduler,
    log: SessionLog,
    conns: BTreeMap<ConnId, Conn>,
    phase: Phase,
    sensor_calibrated: bool,
    calibration_points: Vec<HeadPose>,
    profile: Option<CalibrationProfile>,
    last_mark: Option<AnnotationMark>,
    // Episode whose activation went out to the client.
    delivered_episode: Option<u64>,
    now: f64,
}

impl ControlSession {
    pub fn new(config: SessionConfig) -> Result<Self> {
        config.descriptor.validate()?;
        let scheduler = Scheduler::new(config.scheduler_config())?;
        Ok(Self {
            config,
            scheduler,
            log: SessionLog::new(),
            conns: BTreeMap::new(),
            phase: Phase::Waiting,
            sensor_calibrated: false,
            calibration_points: Vec::new(),
            profile: None,
            last_mark: None,
            delivered_episode: None,
            now: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn descriptor(&self) -> &SessionDescriptor {
        &self.config.descriptor
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn profile(&self) -> Option<&CalibrationProfile> {
        self.profile.as_ref()
    }

    pub fn is_started(&self) -> bool {
        self.phase != Phase::Waiting
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Ended
    }

    /// Index of the running part.
    pub fn current_part(&self) -> Option<usize> {
        match self.phase {
            Phase::Running { part, .. } => Some(part),
            _ => None,
        }
    }

    /// Scheduled end of the session, once started.
    pub fn end_time(&self) -> Option<f64> {
        match self.phase {
            Phase::Running { started_at, .. } => Some(started_at + self.descriptor().total_duration()),
            _ => None,
        }
    }

    pub fn role_of(&self, conn: ConnId) -> Option<Role> {
        self.conns.get(&conn).and_then(|c| c.role)
    }

    pub fn connect(&mut self, conn: ConnId) {
        self.conns.entry(conn).or_default();
    }

    pub fn disconnect(&mut self, now: f64, conn: ConnId) -> Vec<Delivery> {
        let mut out = Vec::new();
        let now = self.advance(now, &mut out);
        if let Some(c) = self.conns.remove(&conn) {
            if let (Some(role), Phase::Running { part, .. }) = (c.role, self.phase) {
                self.record(now, EventKind::PartDegraded { part, role });
            }
        }
        out
    }

    /// Advances the session clock: part boundaries, toggles and the final reveal.
    pub fn tick(&mut self, now: f64) -> Vec<Delivery> {
        let mut out = Vec::new();
        self.advance(now, &mut out);
        out
    }

    /// Handles one inbound frame.
    pub fn handle(&mut self, now: f64, conn: ConnId, bytes: &[u8]) -> Vec<Delivery> {
        let mut out = Vec::new();
        let now = self.advance(now, &mut out);
        self.connect(conn);
        let message = match Message::decode(bytes) {
            Ok(m) => m,
            Err(e) => {
                self.reply_error(now, conn, e.to_string(), None, &mut out);
                return out;
            }
        };
        let c = &self.conns[&conn];
        if c.last_seq.is_some_and(|s| message.seq <= s) {
            let reason = format!(
                "seq {} does not increase past {}",
                message.seq,
                c.last_seq.unwrap_or_default()
            );
            self.reply_error(now, conn, reason, Some(message.seq), &mut out);
            return out;
        }
        if c.last_t.is_some_and(|t| message.t < t) {
            let reason = format!("t {} is earlier than {}", message.t, c.last_t.unwrap_or_default());
            self.reply_error(now, conn, reason, Some(message.seq), &mut out);
            return out;
        }
        let role = c.role;
        if role.is_none() && !matches!(message.body, Body::Hello { .. }) {
            let reason = format!("`{}` before hello: role undeclared", message.body.type_name());
            self.reply_error(now, conn, reason, Some(message.seq), &mut out);
            return out;
        }
        let c = self.conns.get_mut(&conn).expect("connected above");
        c.last_seq = Some(message.seq);
        c.last_t = Some(message.t);
        self.record(
            now,
            EventKind::Received {
                conn,
                from: role,
                message: message.clone(),
            },
        );
        self.dispatch(now, conn, role, message, &mut out);
        out
    }

    fn dispatch(
        &mut self,
        now: f64,
        conn: ConnId,
        role: Option<Role>,
        message: Message,
        out: &mut Vec<Delivery>,
    ) {
        let seq = message.seq;
        match (role, message.body) {
            (None, Body::Hello { role, calibrated }) => {
                if let Some(other) = self.conn_with(role) {
                    let reason = format!("role {role} already held by connection {other}");
                    self.reply_error(now, conn, reason, Some(seq), out);
                    return;
                }
                self.conns.get_mut(&conn).expect("connected").role = Some(role);
                if role == Role::Sensor && calibrated {
                    self.sensor_calibrated = true;
                }
                self.send(now, conn, Body::Hello { role, calibrated }, out);
                self.try_start(now, out);
            }
            (Some(_), Body::Hello { .. }) => {
                self.reply_error(now, conn, "role already declared".into(), Some(seq), out);
            }
            (Some(Role::Sensor), Body::AttentionState { state }) => {
                self.record(now, EventKind::DetectionChange { state });
                self.broadcast(now, Role::Console, Body::AttentionState { state }, out);
                if self.config.trigger == TriggerMode::Auto && self.current_part().is_some() {
                    match state {
                        AttentionLabel::Distracted => self.open_episode(now, out),
                        AttentionLabel::Attentive => self.close_episode(now, out),
                    }
                }
            }
            (Some(Role::Console), Body::Annotation { mark, .. }) => {
                if self.current_part().is_none() {
                    self.reply_error(now, conn, "no part is running".into(), Some(seq), out);
                    return;
                }
                let expected_start = self.last_mark != Some(AnnotationMark::DistractionStart);
                if (mark == AnnotationMark::DistractionStart) != expected_start {
                    let reason = format!(
                        "annotation `{}` out of turn",
                        serde_json::to_value(mark).expect("serializable")
                    );
                    self.reply_error(now, conn, reason, Some(seq), out);
                    return;
                }
                self.last_mark = Some(mark);
                self.record(now, EventKind::Annotation { mark });
                let mut episode = None;
                if self.config.trigger == TriggerMode::Manual {
                    match mark {
                        AnnotationMark::DistractionStart => self.open_episode(now, out),
                        AnnotationMark::Refocus => {
                            episode = self.scheduler.active_episode().map(|e| e.episode_id);
                            self.close_episode(now, out);
                        }
                    }
                    if mark == AnnotationMark::DistractionStart {
                        episode = self.scheduler.active_episode().map(|e| e.episode_id);
                    }
                }
                self.send(now, conn, Body::Annotation { mark, episode }, out);
            }
            (Some(Role::Console), Body::CalibrationStart {}) => {
                self.calibration_points.clear();
                self.broadcast(now, Role::Sensor, Body::CalibrationStart {}, out);
            }
            (Some(Role::Sensor), Body::CalibrationStart {}) => {
                self.calibration_points.clear();
            }
            (Some(Role::Sensor), Body::CalibrationPoint { yaw, pitch }) => {
                self.calibration_points
                    .push(HeadPose::new(yaw, pitch, 0.0, [0.0, 0.0, 1.0]));
                self.broadcast(now, Role::Console, Body::CalibrationPoint { yaw, pitch }, out);
            }
            (Some(Role::Sensor | Role::Console), Body::CalibrationDone { profile }) => {
                let profile = match profile {
                    Some(p) => p.validate().map(|_| p),
                    None => calibrate(&self.calibration_points, now),
                };
                match profile {
                    Ok(p) => {
                        self.calibration_points.clear();
                        self.profile = Some(p);
                        self.sensor_calibrated = true;
                        self.record(now, EventKind::CalibrationDone { profile: p });
                        let body = Body::CalibrationDone { profile: Some(p) };
                        self.broadcast(now, Role::Sensor, body.clone(), out);
                        self.broadcast(now, Role::Console, body, out);
                        self.try_start(now, out);
                    }
                    Err(e) => self.reply_error(now, conn, e.to_string(), Some(seq), out),
                }
            }
            (Some(_), Body::Error { .. }) => {}
            (Some(role), body) => {
                let reason = format!("`{}` is not accepted from {role}", body.type_name());
                self.reply_error(now, conn, reason, Some(seq), out);
            }
            (None, _) => unreachable!("undeclared roles are rejected before dispatch"),
        }
    }

    fn conn_with(&self, role: Role) -> Option<ConnId> {
        self.conns
            .iter()
            .find(|(_, c)| c.role == Some(role))
            .map(|(&id, _)| id)
    }

    fn ready(&self) -> bool {
        let has = |r| self.conn_with(r).is_some();
        has(Role::Client)
            && match self.config.trigger {
                TriggerMode::Auto => has(Role::Sensor) && self.sensor_calibrated,
                TriggerMode::Manual => has(Role::Console),
            }
    }

    fn try_start(&mut self, now: f64, out: &mut Vec<Delivery>) {
        if self.phase != Phase::Waiting || !self.ready() {
            return;
        }
        let d = self.config.descriptor.clone();
        self.record(
            now,
            EventKind::SessionStart {
                session_id: d.session_id.clone(),
                trigger: self.config.trigger,
                seed: self.config.seed,
                blinded: d.blinded,
                parts: d.parts.clone(),
            },
        );
        self.phase = Phase::Running {
            started_at: now,
            part: 0,
        };
        self.start_part(now, 0, out);
    }

    fn start_part(&mut self, t: f64, part: usize, out: &mut Vec<Delivery>) {
        let mode = self.config.descriptor.parts[part].mode;
        self.scheduler
            .set_mode(mode)
            .expect("episodes are closed before a part starts");
        self.last_mark = None;
        self.record(t, EventKind::PartStart { part, mode });
        let body = Body::ModeSet { part, mode };
        self.broadcast(t, Role::Client, body.clone(), out);
        self.broadcast(t, Role::Console, body, out);
    }

    /// Processes everything scheduled up to `now`; returns the effective time.
    fn advance(&mut self, now: f64, out: &mut Vec<Delivery>) -> f64 {
        let now = if now.is_finite() { now.max(self.now) } else { self.now };
        self.now = now;
        while let Phase::Running { started_at, part } = self.phase {
            let end = started_at
                + self.config.descriptor.parts[..=part]
                    .iter()
                    .map(|p| p.duration)
                    .sum::<f64>();
            if end > now {
                break;
            }
            self.scheduler.tick(end);
            self.flush_scheduler(out);
            if self.scheduler.active_episode().is_some_and(|e| e.activated_at < end) {
                self.close_episode(end, out);
            }
            self.record(end, EventKind::PartEnd { part });
            if part + 1 < self.config.descriptor.parts.len() {
                self.phase = Phase::Running {
                    started_at,
                    part: part + 1,
                };
                self.start_part(end, part + 1, out);
            } else {
                self.finish(end, out);
            }
        }
        self.scheduler.tick(now);
        self.flush_scheduler(out);
        now
    }

    fn finish(&mut self, t: f64, out: &mut Vec<Delivery>) {
        self.record(t, EventKind::SessionEnd {});
        self.phase = Phase::Ended;
        let ids: Vec<ConnId> = self.conns.keys().copied().collect();
        for conn in ids {
            if self.conns[&conn].role.is_some() {
                self.send(t, conn, Body::SessionEnd {}, out);
            }
        }
        let reveal = Body::ConditionReveal {
            parts: self.config.descriptor.parts.clone(),
            episodes: self
                .scheduler
                .episodes()
                .iter()
                .map(|e| EpisodeReveal {
                    episode: e.episode_id,
                    condition: e.condition,
                    mode: e.mode,
                    activated_at: e.activated_at,
                    deactivated_at: e.deactivated_at,
                })
                .collect(),
        };
        self.broadcast(t, Role::Console, reveal, out);
    }

    fn open_episode(&mut self, now: f64, out: &mut Vec<Delivery>) {
        if self.scheduler.is_active() {
            return;
        }
        let ep = self
            .scheduler
            .activate(now)
            .expect("no episode is active");
        self.flush_scheduler(out);
        if ep.condition != Condition::Treatment {
            return;
        }
        let (effect, pattern) = match ep.mode {
            InterventionMode::Mindless => (ClientEffect::Mindless, ep.pattern),
            InterventionMode::Alerting => (ClientEffect::Alert, None),
            InterventionMode::Control => return,
        };
        self.delivered_episode = Some(ep.episode_id);
        let body = Body::Activate {
            episode: ep.episode_id,
            effect,
            pattern,
            toggle_period: self.config.toggle_period,
        };
        self.broadcast(now, Role::Client, body.clone(), out);
        self.broadcast(now, Role::Console, body, out);
    }

    fn close_episode(&mut self, now: f64, out: &mut Vec<Delivery>) {
        let Some(ep) = self.scheduler.active_episode() else { return };
        if ep.activated_at >= now {
            return;
        }
        let id = ep.episode_id;
        self.scheduler.deactivate(now).expect("active and later");
        self.flush_scheduler(out);
        if self.delivered_episode.take() == Some(id) {
            let body = Body::Deactivate { episode: id };
            self.broadcast(now, Role::Client, body.clone(), out);
            self.broadcast(now, Role::Console, body, out);
        }
    }

    // Moves scheduler records into the log. With per-cycle patterns, every later "on"
    // phase re-sends the activation so the client picks up the new pattern.
    fn flush_scheduler(&mut self, out: &mut Vec<Delivery>) {
        for SessionEvent { t, kind } in self.scheduler.drain_events() {
            if let EventKind::ToggleOn { episode, pattern } = &kind {
                let first = self
                    .scheduler
                    .episodes()
                    .get(*episode as usize)
                    .is_some_and(|e| e.activated_at == t);
                if self.config.pattern_per_cycle
                    && !first
                    && self.delivered_episode == Some(*episode)
                {
                    let body = Body::Activate {
                        episode: *episode,
                        effect: ClientEffect::Mindless,
                        pattern: *pattern,
                        toggle_period: self.config.toggle_period,
                    };
                    self.log_push(t, kind.clone());
                    self.broadcast(t, Role::Client, body.clone(), out);
                    self.broadcast(t, Role::Console, body, out);
                    continue;
                }
            }
            self.log_push(t, kind);
        }
    }

    fn record(&mut self, t: f64, kind: EventKind) {
        self.flush_pending_scheduler_events();
        self.log_push(t, kind);
    }

    fn flush_pending_scheduler_events(&mut self) {
        let pending = self.scheduler.drain_events();
        for e in pending {
            self.log_push(e.t, e.kind);
        }
    }

    fn log_push(&mut self, t: f64, kind: EventKind) {
        self.log
            .append(SessionEvent::new(t, kind))
            .expect("session records are produced in time order");
    }

    fn broadcast(&mut self, t: f64, role: Role, body: Body, out: &mut Vec<Delivery>) {
        if let Some(conn) = self.conn_with(role) {
            self.send(t, conn, body, out);
        }
    }

    fn reply_error(
        &mut self,
        t: f64,
        conn: ConnId,
        reason: String,
        ref_seq: Option<u64>,
        out: &mut Vec<Delivery>,
    ) {
        self.send(t, conn, Body::Error { reason, ref_seq }, out);
    }

    fn send(&mut self, t: f64, conn: ConnId, body: Body, out: &mut Vec<Delivery>) {
        let Some(c) = self.conns.get_mut(&conn) else { return };
        let to = c.role;
        if to == Some(Role::Console) && self.config.descriptor.blinded && !self.blinding_lifted()
            && matches!(
                body,
                Body::Activate { .. }
                    | Body::Deactivate { .. }
                    | Body::ModeSet { .. }
                    | Body::ConditionReveal { .. }
            ) {
                return;
            }
        let c = self.conns.get_mut(&conn).expect("checked above");
        c.out_seq += 1;
        let message = Message::new(t, c.out_seq, body);
        self.log_push(
            t,
            EventKind::Sent {
                conn,
                to,
                message: message.clone(),
            },
        );
        out.push(Delivery { conn, to, message });
    }

    fn blinding_lifted(&self) -> bool {
        self.phase == Phase::Ended
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hello(t: f64, seq: u64, role: Role, calibrated: bool) -> Vec<u8> {
        Message::new(t, seq, Body::Hello { role, calibrated }).encode()
    }

    fn msg(t: f64, seq: u64, body: Body) -> Vec<u8> {
        Message::new(t, seq, body).encode()
    }

    fn descriptor(blinded: bool) -> SessionDescriptor {
        SessionDescriptor::with_modes(
            "s1",
            &[
                InterventionMode::Mindless,
                InterventionMode::Alerting,
                InterventionMode::Control,
            ],
            600.0,
            blinded,
        )
        .unwrap()
    }

    fn auto_session(blinded: bool) -> ControlSession {
        let mut s =
            ControlSession::new(SessionConfig::new(descriptor(blinded), TriggerMode::Auto, 5))
                .unwrap();
        s.handle(0.0, 1, &hello(0.0, 1, Role::Client, false));
        s.handle(0.0, 2, &hello(0.0, 1, Role::Sensor, true));
        s.handle(0.0, 3, &hello(0.0, 1, Role::Console, false));
        s
    }

    fn types_to(out: &[Delivery], conn: ConnId) -> Vec<&'static str> {
        out.iter()
            .filter(|d| d.conn == conn)
            .map(|d| d.message.body.type_name())
            .collect()
    }

    #[test]
    fn random_order_covers_six_permutations_uniformly() {
        let mut counts = BTreeMap::new();
        for seed in 0..6000 {
            let d = SessionDescriptor::random_order("s", seed, 60.0, true).unwrap();
            let modes: Vec<_> = d.parts.iter().map(|p| p.mode.name()).collect();
            *counts.entry(modes).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, n) in counts {
            assert!((900..=1100).contains(&n), "{n}");
        }
    }

    #[test]
    fn session_starts_when_roles_ready() {
        let s = auto_session(true);
        assert!(s.is_started());
        assert_eq!(s.current_part(), Some(0));
    }

    #[test]
    fn distracted_sensor_activates_client() {
        let mut s = auto_session(true);
        let out = s.handle(10.0, 2, &msg(10.0, 2, Body::AttentionState { state: AttentionLabel::Distracted }));
        let activate = out.iter().find(|d| d.conn == 1).expect("client delivery");
        assert!(matches!(
            activate.message.body,
            Body::Activate { effect: ClientEffect::Mindless, pattern: Some(_), .. }
        ));
        assert!(!types_to(&out, 3).contains(&"activate"));
        let out = s.handle(14.0, 2, &msg(14.0, 3, Body::AttentionState { state: AttentionLabel::Attentive }));
        assert_eq!(types_to(&out, 1), vec!["deactivate"]);
    }

    #[test]
    fn control_part_logs_without_client_delivery() {
        let mut s = auto_session(false);
        s.tick(1200.0);
        assert_eq!(s.current_part(), Some(2));
        let out = s.handle(1300.0, 2, &msg(1300.0, 2, Body::AttentionState { state: AttentionLabel::Distracted }));
        assert!(types_to(&out, 1).is_empty());
        assert!(s.scheduler().is_active());
        assert!(s
            .log()
            .events()
            .iter()
            .any(|e| e.t == 1300.0 && matches!(e.kind, EventKind::DetectionChange { .. })));
    }

    #[test]
    fn exactly_two_mode_boundaries() {
        let mut s = auto_session(true);
        s.tick(1800.0);
        assert!(s.is_finished());
        let starts: Vec<f64> = s
            .log()
            .events()
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::PartStart { part, .. } if part > 0 => Some(e.t),
                _ => None,
            })
            .collect();
        assert_eq!(starts, vec![600.0, 1200.0]);
    }

    #[test]
    fn boundary_closes_episode_and_reveal_follows_end() {
        let mut s = auto_session(true);
        s.handle(590.0, 2, &msg(590.0, 2, Body::AttentionState { state: AttentionLabel::Distracted }));
        let out = s.tick(605.0);
        assert_eq!(types_to(&out, 1), vec!["deactivate", "mode_set"]);
        assert!(types_to(&out, 3).is_empty());
        let out = s.tick(2000.0);
        let console = types_to(&out, 3);
        assert_eq!(console, vec!["session_end", "condition_reveal"]);
    }

    #[test]
    fn manual_annotation_ack_hides_condition() {
        let mut s = ControlSession::new(SessionConfig::new(descriptor(true), TriggerMode::Manual, 9))
            .unwrap();
        s.handle(0.0, 1, &hello(0.0, 1, Role::Client, false));
        s.handle(0.0, 3, &hello(0.0, 1, Role::Console, false));
        assert!(s.is_started());
        let out = s.handle(
            5.0,
            3,
            &msg(5.0, 2, Body::Annotation { mark: AnnotationMark::DistractionStart, episode: None }),
        );
        let ack: Vec<_> = out.iter().filter(|d| d.conn == 3).collect();
        assert_eq!(ack.len(), 1);
        let text = ack[0].message.encode_text();
        assert_eq!(ack[0].message.body, Body::Annotation { mark: AnnotationMark::DistractionStart, episode: Some(0) });
        assert!(!text.contains("condition") && !text.contains("treatment"), "{text}");
        let out = s.handle(
            6.0,
            3,
            &msg(6.0, 3, Body::Annotation { mark: AnnotationMark::DistractionStart, episode: None }),
        );
        assert_eq!(types_to(&out, 3), vec!["error"]);
    }

    #[test]
    fn duplicate_and_undeclared_roles_rejected() {
        let mut s = auto_session(false);
        let out = s.handle(1.0, 9, &hello(1.0, 1, Role::Client, false));
        assert_eq!(types_to(&out, 9), vec!["error"]);
        assert_eq!(s.role_of(9), None);
        let out = s.handle(1.0, 10, &msg(1.0, 1, Body::AttentionState { state: AttentionLabel::Distracted }));
        assert_eq!(types_to(&out, 10), vec!["error"]);
        assert!(!s.scheduler().is_active());
    }

    #[test]
    fn seq_violation_drops_only_offender() {
        let mut s = auto_session(false);
        s.handle(1.0, 2, &msg(1.0, 5, Body::AttentionState { state: AttentionLabel::Distracted }));
        let out = s.handle(2.0, 2, &msg(2.0, 5, Body::AttentionState { state: AttentionLabel::Attentive }));
        assert!(matches!(out[0].message.body, Body::Error { ref_seq: Some(5), .. }));
        assert!(s.scheduler().is_active());
        let out = s.handle(3.0, 2, &msg(3.0, 6, Body::AttentionState { state: AttentionLabel::Attentive }));
        assert!(types_to(&out, 1).contains(&"deactivate"));
    }

    #[test]
    fn garbage_gets_error_reply() {
        let mut s = auto_session(false);
        let out = s.handle(1.0, 2, br#"{"t":1.0,"seq":9,"type":"warp"}"#);
        assert_eq!(types_to(&out, 2), vec!["error"]);
        assert_eq!(s.role_of(2), Some(Role::Sensor));
    }

    #[test]
    fn disconnect_marks_part_degraded() {
        let mut s = auto_session(false);
        s.disconnect(50.0, 2);
        assert!(s.log().events().iter().any(|e| matches!(
            e.kind,
            EventKind::PartDegraded { part: 0, role: Role::Sensor }
        )));
        s.tick(1800.0);
        assert!(s.is_finished());
    }

    #[test]
    fn calibration_flow_computes_profile() {
        let mut s = ControlSession::new(SessionConfig::new(descriptor(false), TriggerMode::Auto, 1))
            .unwrap();
        s.handle(0.0, 1, &hello(0.0, 1, Role::Client, false));
        s.handle(0.0, 2, &hello(0.0, 1, Role::Sensor, false));
        s.handle(0.0, 3, &hello(0.0, 1, Role::Console, false));
        assert!(!s.is_started());
        let out = s.handle(1.0, 3, &msg(1.0, 2, Body::CalibrationStart {}));
        assert_eq!(types_to(&out, 2), vec!["calibration_start"]);
        for (i, (y, p)) in [(-30.0, 5.0), (25.0, -10.0), (0.0, 12.0)].into_iter().enumerate() {
            let t = 2.0 + i as f64;
            s.handle(t, 2, &msg(t, 2 + i as u64, Body::CalibrationPoint { yaw: y, pitch: p }));
        }
        s.handle(6.0, 3, &msg(6.0, 3, Body::CalibrationDone { profile: None }));
        let p = s.profile().unwrap();
        assert_eq!((p.yaw_min, p.yaw_max, p.pitch_min, p.pitch_max), (-30.0, 25.0, -10.0, 12.0));
        assert!(s.is_started());
    }

    #[test]
    fn log_is_time_ordered_and_replays() {
        let mut s = auto_session(true);
        let mut seq = 2;
        let mut t = 1.0;
        while t < 1800.0 {
            let state = if (t as u64 / 20).is_multiple_of(2) {
                AttentionLabel::Attentive
            } else {
                AttentionLabel::Distracted
            };
            s.handle(t, 2, &msg(t, seq, Body::AttentionState { state }));
            seq += 1;
            t += 7.3;
        }
        s.tick(1900.0);
        let text = s.log().to_jsonl();
        let back = SessionLog::from_jsonl(&text).unwrap();
        assert_eq!(&back, s.log());
        let replayed = Scheduler::replay(s.config().scheduler_config(), &back).unwrap();
        assert_eq!(replayed.episodes(), s.scheduler().episodes());
    }
}
