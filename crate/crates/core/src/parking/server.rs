//! TCP front end. Connections are handled on their own threads but every
//! command runs under one lock, so commands are applied in a single total order.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::protocol::{handle_line, Clock};
use super::{ParkingService, PaymentGateway};

pub type SharedService<G> = Arc<Mutex<ParkingService<G>>>;

pub struct Server<G: PaymentGateway> {
    listener: TcpListener,
    service: SharedService<G>,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
}

/// Stops a server started with [`Server::spawn`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

impl<G: PaymentGateway + 'static> Server<G> {
    pub fn bind(
        addr: impl ToSocketAddrs,
        service: SharedService<G>,
        clock: Arc<dyn Clock>,
    ) -> std::io::Result<Self> {
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            service,
            clock,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped.
    pub fn run(self) {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let service = Arc::clone(&self.service);
            let clock = Arc::clone(&self.clock);
            std::thread::spawn(move || {
                if let Err(e) = serve_connection(stream, &service, clock.as_ref()) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
    }

    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = Arc::clone(&self.stop);
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn serve_connection<G: PaymentGateway>(
    stream: TcpStream,
    service: &Mutex<ParkingService<G>>,
    clock: &dyn Clock,
) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = {
            let mut guard = service.lock().unwrap_or_else(|p| p.into_inner());
            handle_line(&mut guard, clock, &line)
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
