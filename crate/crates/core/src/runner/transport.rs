//! Request/response transports: a TCP server and client speaking
//! newline-delimited JSON, and an in-process loopback with the same contract.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::experiment::Experiment;
use super::protocol::{ErrorResponse, EvalRequest, EvalResponse, ServerMessage, PROTOCOL_VERSION};
use crate::error::{Error, Result};

/// Anything that can answer evaluation requests.
pub trait Transport {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse> {
        (**self).evaluate(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse> {
        (**self).evaluate(request)
    }
}

/// Server-side handling of one request line.
pub fn handle_line(experiment: &Experiment, line: &str) -> ServerMessage {
    let request = match EvalRequest::parse(line) {
        Ok(r) => r,
        Err(e) => {
            return ServerMessage::Error(ErrorResponse {
                version: PROTOCOL_VERSION,
                id: e.id,
                field: e.field,
                message: e.message,
            })
        }
    };
    match experiment.evaluate(&request) {
        Ok(r) => ServerMessage::Response(r),
        Err(e) => ServerMessage::Error(ErrorResponse {
            version: PROTOCOL_VERSION,
            id: Some(request.id),
            field: e.field,
            message: e.message,
        }),
    }
}

fn into_response(message: ServerMessage, id: u64) -> Result<EvalResponse> {
    match message {
        ServerMessage::Response(r) if r.id == id => Ok(r),
        ServerMessage::Response(r) => Err(Error::Protocol(format!("response id {} for request {id}", r.id))),
        ServerMessage::Error(e) => Err(Error::Remote {
            field: e.field,
            message: e.message,
        }),
    }
}

/// In-process transport. Requests and responses still pass through their
/// wire encoding, so loopback and TCP runs see identical bytes.
pub struct Loopback {
    experiment: Experiment,
}

impl Loopback {
    pub fn new(experiment: Experiment) -> Self {
        Self { experiment }
    }
}

impl Transport for Loopback {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse> {
        let line = serde_json::to_string(request)?;
        let reply = serde_json::to_string(&handle_line(&self.experiment, &line))?;
        into_response(serde_json::from_str(&reply)?, request.id)
    }
}

pub struct TcpClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl TcpClient {
    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Option<Duration>) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(timeout)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Send a raw line and return the raw reply line.
    pub fn round_trip(&mut self, line: &str) -> Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "server closed the connection",
            )));
        }
        Ok(reply)
    }
}

impl Transport for TcpClient {
    fn evaluate(&mut self, request: &EvalRequest) -> Result<EvalResponse> {
        let reply = self.round_trip(&serde_json::to_string(request)?)?;
        into_response(serde_json::from_str(&reply)?, request.id)
    }
}

fn serve_connection(stream: TcpStream, experiment: &Mutex<Experiment>) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // one evaluation at a time across all connections, like the hardware
        let message = {
            let exp = experiment.lock().unwrap_or_else(|p| p.into_inner());
            handle_line(&exp, &line)
        };
        let mut out = serde_json::to_string(&message).map_err(std::io::Error::other)?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accept connections forever, one thread per connection.
pub fn serve(listener: TcpListener, experiment: Experiment) -> Result<()> {
    let experiment = Arc::new(Mutex::new(experiment));
    for stream in listener.incoming() {
        let stream = stream?;
        let exp = Arc::clone(&experiment);
        std::thread::spawn(move || {
            // a dropped client is not a server failure
            let _ = serve_connection(stream, &exp);
        });
    }
    Ok(())
}

/// Bind `addr` and serve on a background thread; returns the bound address.
pub fn spawn_server<A: ToSocketAddrs>(addr: A, experiment: Experiment) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = std::thread::spawn(move || {
        let _ = serve(listener, experiment);
    });
    Ok((local, handle))
}
