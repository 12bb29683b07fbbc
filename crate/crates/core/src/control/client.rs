use std::io::ErrorKind;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message as WsMessage, WebSocket};

use super::message::{Body, Message};
use super::{ControlError, Result, Role};

/// Blocking WebSocket peer for scripted clients, sensors and consoles.
///
/// Every text frame received is kept in [`ControlClient::transcript`].
pub struct ControlClient {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
    role: Role,
    seq: u64,
    epoch: Instant,
    clock_rate: f64,
    transcript: Vec<String>,
    closed: bool,
}

impl ControlClient {
    /// Connects to `ws://addr/` and declares `role`; fails if the server rejects it.
    pub fn connect(addr: &str, role: Role, calibrated: bool, clock_rate: f64) -> Result<Self> {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}/"))?;
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_nodelay(true)?;
        }
        let mut client = Self {
            ws,
            role,
            seq: 0,
            epoch: Instant::now(),
            clock_rate,
            transcript: Vec::new(),
            closed: false,
        };
        client.send(Body::Hello { role, calibrated })?;
        match client.recv(Duration::from_secs(10))? {
            Some(Message { body: Body::Hello { .. }, .. }) => Ok(client),
            Some(Message { body: Body::Error { reason, .. }, .. }) => {
                Err(ControlError::Protocol(reason))
            }
            other => Err(ControlError::Protocol(format!(
                "unexpected reply to hello: {other:?}"
            ))),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Local session-scaled clock, seconds since connecting.
    pub fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * self.clock_rate
    }

    pub fn send(&mut self, body: Body) -> Result<u64> {
        self.seq += 1;
        let m = Message::new(self.now(), self.seq, body);
        self.send_raw(m.encode_text())?;
        Ok(self.seq)
    }

    pub fn send_raw(&mut self, text: String) -> Result<()> {
        self.ws.send(WsMessage::text(text))?;
        Ok(())
    }

    /// Next message, or `None` on timeout or once the server has closed.
    pub fn recv(&mut self, timeout: Duration) -> Result<Option<Message>> {
        if self.closed {
            return Ok(None);
        }
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.set_timeout(left)?;
            match self.ws.read() {
                Ok(WsMessage::Text(text)) => {
                    self.transcript.push(text.to_string());
                    return Ok(Some(Message::decode(text.as_bytes())?));
                }
                Ok(WsMessage::Close(_)) => {
                    self.closed = true;
                    return Ok(None);
                }
                Ok(_) => {}
                Err(tungstenite::Error::Io(e))
                    if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    self.closed = true;
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Collects everything that arrives within `timeout`.
    pub fn drain(&mut self, timeout: Duration) -> Result<Vec<Message>> {
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        while let Some(m) = self.recv(deadline.saturating_duration_since(Instant::now()))? {
            out.push(m);
        }
        Ok(out)
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Raw text of every frame received so far.
    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    pub fn close(mut self) -> Result<()> {
        if !self.closed {
            let _ = self.ws.close(None);
            let _ = self.ws.flush();
        }
        Ok(())
    }

    fn set_timeout(&mut self, d: Duration) -> Result<()> {
        if let MaybeTlsStream::Plain(s) = self.ws.get_mut() {
            s.set_read_timeout(Some(d.max(Duration::from_millis(1))))?;
        }
        Ok(())
    }
}
