use std::fs::{self, File};
use std::io::{self, BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message as WsMessage, WebSocket};

use super::session::{ConnId, ControlSession, SessionConfig};
use super::{ControlError, Result};
use crate::scheduler::SessionLog;

/// Environment variable that overrides the session log directory.
pub const LOG_DIR_ENV: &str = "ATTRACTOR_LOG_DIR";

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub session: SessionConfig,
    /// Session seconds per wall-clock second.
    pub clock_rate: f64,
    pub log_dir: PathBuf,
    pub tick_interval: Duration,
}

impl ServerOptions {
    /// Real-time clock, log directory from [`LOG_DIR_ENV`] or the working directory.
    pub fn new(session: SessionConfig) -> Self {
        let log_dir = std::env::var_os(LOG_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."));
        Self {
            session,
            clock_rate: 1.0,
            log_dir,
            tick_interval: Duration::from_millis(10),
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log_dir.join(format!(
            "session-{}.events.jsonl",
            self.session.descriptor.session_id
        ))
    }
}

/// Binds the listening socket; a port already in use is a [`ControlError::Bind`].
pub fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|source| ControlError::Bind {
        addr: addr.to_string(),
        source,
    })
}

enum Inbound {
    Open(ConnId, Sender<Outbound>),
    Frame(ConnId, Vec<u8>),
    Closed(ConnId),
}

enum Outbound {
    Frame(String),
    Close,
}

/// Runs one session to completion and returns its log.
///
/// Connections are served on their own threads; every routing decision and log append
/// happens on the calling thread, in arrival order.
pub fn serve(listener: TcpListener, options: ServerOptions) -> Result<SessionLog> {
    if !(options.clock_rate.is_finite() && options.clock_rate > 0.0) {
        return Err(ControlError::InvalidSession(format!(
            "clock rate must be positive, got {}",
            options.clock_rate
        )));
    }
    let mut session = ControlSession::new(options.session.clone())?;
    fs::create_dir_all(&options.log_dir)?;
    let mut log_file = BufWriter::new(File::create(options.log_path())?);
    let mut written = 0;

    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    listener.set_nonblocking(true)?;
    let acceptor = {
        let stop = Arc::clone(&stop);
        let tx = tx.clone();
        thread::spawn(move || accept_loop(listener, tx, stop))
    };
    drop(tx);

    let epoch = Instant::now();
    let clock = |at: Instant| at.duration_since(epoch).as_secs_f64() * options.clock_rate;
    let mut peers: Vec<(ConnId, Sender<Outbound>)> = Vec::new();

    let result = loop {
        let event = rx.recv_timeout(options.tick_interval);
        let now = clock(Instant::now());
        let deliveries = match event {
            Ok(Inbound::Open(conn, out)) => {
                peers.push((conn, out));
                session.connect(conn);
                Vec::new()
            }
            Ok(Inbound::Frame(conn, bytes)) => session.handle(now, conn, &bytes),
            Ok(Inbound::Closed(conn)) => {
                peers.retain(|(c, _)| *c != conn);
                session.disconnect(now, conn)
            }
            Err(RecvTimeoutError::Timeout) => session.tick(now),
            Err(RecvTimeoutError::Disconnected) => break Ok(()),
        };
        for d in deliveries {
            if let Some((_, out)) = peers.iter().find(|(c, _)| *c == d.conn) {
                let _ = out.send(Outbound::Frame(d.message.encode_text()));
            }
        }
        let events = &session.log().events()[written..];
        if let Err(e) = write_events(&mut log_file, events) {
            break Err(e);
        }
        written = session.log().len();
        if session.is_finished() {
            break Ok(());
        }
    };

    for (_, out) in &peers {
        let _ = out.send(Outbound::Close);
    }
    stop.store(true, Ordering::SeqCst);
    let _ = acceptor.join();
    log_file.flush()?;
    result?;
    Ok(session.log().clone())
}

fn write_events(w: &mut impl Write, events: &[crate::scheduler::SessionEvent]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *w, e).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next: ConnId = 1;
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let conn = next;
                next += 1;
                let tx = tx.clone();
                let stop = Arc::clone(&stop);
                workers.push(thread::spawn(move || {
                    if let Err(e) = connection(stream, peer, conn, tx.clone(), stop) {
                        log::debug!("connection {conn} from {peer}: {e}");
                    }
                    let _ = tx.send(Inbound::Closed(conn));
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn connection(
    stream: TcpStream,
    _peer: SocketAddr,
    conn: ConnId,
    tx: Sender<Inbound>,
    stop: Arc<AtomicBool>,
) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => ControlError::from(e),
        tungstenite::HandshakeError::Interrupted(_) => {
            ControlError::Protocol("handshake interrupted".into())
        }
    })?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let (out_tx, out_rx) = mpsc::channel();
    if tx.send(Inbound::Open(conn, out_tx)).is_err() {
        return Ok(());
    }
    pump(&mut ws, conn, &tx, &out_rx, &stop)
}

fn pump(
    ws: &mut WebSocket<TcpStream>,
    conn: ConnId,
    tx: &Sender<Inbound>,
    out_rx: &Receiver<Outbound>,
    stop: &AtomicBool,
) -> Result<()> {
    loop {
        loop {
            match out_rx.try_recv() {
                Ok(Outbound::Frame(text)) => ws.send(WsMessage::text(text))?,
                Ok(Outbound::Close) | Err(mpsc::TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
                Err(mpsc::TryRecvError::Empty) => break,
            }
        }
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                let _ = tx.send(Inbound::Frame(conn, text.as_bytes().to_vec()));
            }
            Ok(WsMessage::Binary(bytes)) => {
                let _ = tx.send(Inbound::Frame(conn, bytes.to_vec()));
            }
            Ok(WsMessage::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                return Ok(())
            }
            Err(e) => return Err(e.into()),
        }
    }
}
