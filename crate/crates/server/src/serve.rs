//! Live session service: newline-delimited JSON over TCP.
//!
//! The first client to connect is the operator; later clients only watch.
//! Every client receives a [`MeshBundle`] on connect, then state frames at
//! the configured rate and canvas diffs as cells are painted. If the
//! operator disconnects the session pauses until another client connects,
//! which then becomes the operator.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Receiver, RecvTimeoutError, Sender};

use crate::config::AvatarConfig;
use crate::protocol::{parse_client_line, ClientMessage, Condition, Envelope, ServerMessage, StateFrame};
use crate::replay::ReplayLog;
use crate::session::{Session, SessionError, SessionOptions};

/// Single-slot latest-value mailbox: a new value replaces an unread one.
pub struct Mailbox<T> {
    slot: Mutex<Option<T>>,
    ready: Condvar,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self { slot: Mutex::new(None), ready: Condvar::new() }
    }
}

impl<T> Mailbox<T> {
    pub fn put(&self, value: T) {
        *self.slot.lock().unwrap() = Some(value);
        self.ready.notify_one();
    }

    pub fn take(&self) -> Option<T> {
        self.slot.lock().unwrap().take()
    }

    /// Waits up to `timeout` for a value.
    pub fn wait(&self, timeout: Duration) -> Option<T> {
        let guard = self.slot.lock().unwrap();
        let (mut guard, _) = self.ready.wait_timeout_while(guard, timeout, |v| v.is_none()).unwrap();
        guard.take()
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub port: u16,
    pub condition: Condition,
    pub record: Option<PathBuf>,
    pub plane: Option<avatar_core::teleop::PlaneFit>,
}

struct Client {
    id: u64,
    frames: Arc<Mailbox<StateFrame>>,
    events: Sender<(f64, ServerMessage)>,
    alive: Arc<AtomicBool>,
}

impl Client {
    fn send(&self, t: f64, m: ServerMessage) {
        let _ = self.events.send((t, m));
    }
}

#[derive(Default)]
struct Clients {
    list: Mutex<Vec<Client>>,
    operator: Mutex<Option<u64>>,
}

impl Clients {
    fn operator_alive(&self) -> bool {
        let op = *self.operator.lock().unwrap();
        let list = self.list.lock().unwrap();
        op.is_some_and(|id| list.iter().any(|c| c.id == id && c.alive.load(Ordering::Relaxed)))
    }

    /// Drops dead clients and promotes the oldest live one when the operator
    /// has gone.
    fn prune(&self) {
        let mut list = self.list.lock().unwrap();
        list.retain(|c| c.alive.load(Ordering::Relaxed));
        let mut op = self.operator.lock().unwrap();
        if !op.is_some_and(|id| list.iter().any(|c| c.id == id)) {
            *op = list.first().map(|c| c.id);
            if let Some(id) = *op {
                log::info!("client {id} is now the operator");
            }
        }
    }

    fn broadcast(&self, t: f64, m: &ServerMessage) {
        for c in self.list.lock().unwrap().iter() {
            c.send(t, m.clone());
        }
    }

    fn publish(&self, frame: &StateFrame) {
        for c in self.list.lock().unwrap().iter() {
            c.frames.put(frame.clone());
        }
    }

    fn reply(&self, id: u64, t: f64, m: ServerMessage) {
        if let Some(c) = self.list.lock().unwrap().iter().find(|c| c.id == id) {
            c.send(t, m);
        }
    }
}

/// A bound, not yet running service.
pub struct Server {
    listener: TcpListener,
    session: Session,
    clients: Arc<Clients>,
    stop: Arc<AtomicBool>,
}

/// Messages from reader threads to the control loop.
struct Incoming {
    client: u64,
    envelope: Envelope<ClientMessage>,
}

impl Server {
    pub fn bind(config: AvatarConfig, opts: &ServeOptions) -> Result<Server, SessionError> {
        let listener = TcpListener::bind(("127.0.0.1", opts.port))
            .map_err(|e| SessionError::Setup(format!("binding port {}: {e}", opts.port)))?;
        let session_opts =
            SessionOptions { record: opts.record.clone(), plane: opts.plane, lockstep: false, ..Default::default() };
        let session = Session::new(config, opts.condition, &session_opts)?;
        Ok(Server { listener, session, clients: Arc::default(), stop: Arc::new(AtomicBool::new(false)) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Flag that stops [`Server::run`] when set.
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Runs until the operator sends `session_end` or the stop flag is set.
    /// Simulation time follows the wall clock.
    pub fn run(mut self) -> Result<ReplayLog, SessionError> {
        let (in_tx, in_rx) = unbounded::<Incoming>();
        let bundle = ServerMessage::MeshBundle(Box::new(self.session.mesh_bundle()));
        let acceptor = spawn_acceptor(
            self.listener.try_clone().map_err(|e| SessionError::Setup(e.to_string()))?,
            self.clients.clone(),
            in_tx,
            bundle,
            self.stop.clone(),
        );
        let result = self.control_loop(&in_rx);
        self.stop.store(true, Ordering::Relaxed);
        // Unblock the acceptor.
        let _ = TcpStream::connect(self.local_addr());
        let _ = acceptor.join();
        for c in self.clients.list.lock().unwrap().drain(..) {
            c.alive.store(false, Ordering::Relaxed);
        }
        result?;
        self.session.finish()
    }

    fn control_loop(&mut self, inputs: &Receiver<Incoming>) -> Result<(), SessionError> {
        let dt = self.session.world.control_dt();
        let frame_period = 1.0 / self.session.config.server.state_rate;
        let mut next_frame = 0.0;
        let mut clock = Instant::now();
        let mut sim_at_clock = self.session.time();
        let mut paused = true;
        let mut due = Vec::new();
        while !self.stop.load(Ordering::Relaxed) && !self.session.ended {
            self.clients.prune();
            if !self.clients.operator_alive() {
                if !paused {
                    log::info!("operator disconnected; session paused at t={:.3}", self.session.time());
                    paused = true;
                }
                // Inputs from watchers are answered but never applied.
                while let Ok(msg) = inputs.try_recv() {
                    self.reject(msg);
                }
                std::thread::sleep(Duration::from_millis(10));
                continue;
            }
            if paused {
                paused = false;
                clock = Instant::now();
                sim_at_clock = self.session.time();
            }
            let target = sim_at_clock + clock.elapsed().as_secs_f64();
            let mut ran = 0;
            while self.session.time() + dt <= target && !self.session.ended {
                due.clear();
                self.collect(inputs, &mut due);
                self.session.step(&due)?;
                ran += 1;
                let t = self.session.time();
                let cells = self.session.take_canvas_diff();
                if !cells.is_empty() {
                    self.clients.broadcast(t, &ServerMessage::CanvasDiff { cells });
                }
                if t + 0.5 * dt >= next_frame {
                    self.clients.publish(&self.session.frame());
                    next_frame += frame_period;
                }
                if ran >= 50 {
                    break;
                }
            }
            if ran >= 50 {
                log::debug!("control loop behind the wall clock at t={:.3}", self.session.time());
            } else {
                std::thread::sleep(Duration::from_micros(500));
            }
        }
        Ok(())
    }

    fn reject(&self, msg: Incoming) {
        let t = self.session.time();
        self.clients.reply(
            msg.client,
            t,
            ServerMessage::Error { echo: Some(msg.envelope.seq), message: "client is not the operator".into() },
        );
    }

    /// Drains pending operator input. Tablet samples and condition changes
    /// are state: only the latest of each per tick is applied. Every other
    /// message is applied in arrival order.
    fn collect(&self, inputs: &Receiver<Incoming>, due: &mut Vec<(u64, ClientMessage)>) {
        let operator = *self.clients.operator.lock().unwrap();
        let t = self.session.time();
        while let Ok(msg) = inputs.try_recv() {
            if Some(msg.client) != operator {
                self.reject(msg);
                continue;
            }
            let Envelope { seq, body, .. } = msg.envelope;
            let coalesce = |m: &ClientMessage| {
                std::mem::discriminant(m) == std::mem::discriminant(&body)
                    && matches!(body, ClientMessage::TabletSample(_) | ClientMessage::ConditionSet { .. })
            };
            if let Some(slot) = due.iter_mut().find(|(_, m)| coalesce(m)) {
                *slot = (seq, body);
            } else {
                due.push((seq, body));
            }
            self.clients.reply(msg.client, t, ServerMessage::Ack { ack: seq });
        }
    }
}

fn spawn_acceptor(
    listener: TcpListener,
    clients: Arc<Clients>,
    inputs: Sender<Incoming>,
    bundle: ServerMessage,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    let ids = AtomicU64::new(1);
    std::thread::Builder::new()
        .name("acceptor".into())
        .spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::Relaxed) {
                    return;
                }
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let id = ids.fetch_add(1, Ordering::Relaxed);
                if let Err(e) = attach(id, stream, &clients, inputs.clone(), &bundle) {
                    log::warn!("client {id}: {e}");
                }
            }
        })
        .expect("spawning the acceptor")
}

fn attach(
    id: u64,
    stream: TcpStream,
    clients: &Arc<Clients>,
    inputs: Sender<Incoming>,
    bundle: &ServerMessage,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let alive = Arc::new(AtomicBool::new(true));
    let frames = Arc::new(Mailbox::default());
    let (events, outbox) = unbounded();
    let _ = events.send((0.0, bundle.clone()));
    {
        let w_alive = alive.clone();
        let w_frames = frames.clone();
        std::thread::Builder::new().name(format!("writer-{id}")).spawn(move || {
            write_loop(stream, outbox, &w_frames, &w_alive);
        })?;
    }
    {
        let r_alive = alive.clone();
        let r_events = events.clone();
        std::thread::Builder::new().name(format!("reader-{id}")).spawn(move || {
            read_loop(id, reader, inputs, &r_events, &r_alive);
        })?;
    }
    clients.list.lock().unwrap().push(Client { id, frames, events, alive });
    let mut op = clients.operator.lock().unwrap();
    if op.is_none() {
        *op = Some(id);
        log::info!("client {id} connected as operator");
    } else {
        log::info!("client {id} connected as watcher");
    }
    Ok(())
}

fn read_loop(id: u64, stream: TcpStream, inputs: Sender<Incoming>, replies: &Sender<(f64, ServerMessage)>, alive: &AtomicBool) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match parse_client_line(&line) {
            Ok(envelope) => {
                if inputs.send(Incoming { client: id, envelope }).is_err() {
                    break;
                }
            }
            Err((echo, message)) => {
                let _ = replies.send((0.0, ServerMessage::Error { echo, message }));
            }
        }
    }
    alive.store(false, Ordering::Relaxed);
}

fn write_loop(mut stream: TcpStream, outbox: Receiver<(f64, ServerMessage)>, frames: &Mailbox<StateFrame>, alive: &AtomicBool) {
    let mut seq = 0u64;
    let mut write = |t: f64, body: ServerMessage, stream: &mut TcpStream| {
        seq += 1;
        stream.write_all(Envelope { seq, t, body }.to_line().as_bytes())
    };
    while alive.load(Ordering::Relaxed) {
        let res = match outbox.recv_timeout(Duration::from_millis(5)) {
            Ok((t, m)) => write(t, m, &mut stream),
            Err(RecvTimeoutError::Timeout) => Ok(()),
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let res = res.and_then(|_| match frames.take() {
            Some(f) => write(f.sim_time, ServerMessage::StateFrame(Box::new(f)), &mut stream),
            None => Ok(()),
        });
        if res.is_err() {
            break;
        }
    }
    alive.store(false, Ordering::Relaxed);
    let _ = stream.shutdown(std::net::Shutdown::Both);
}
