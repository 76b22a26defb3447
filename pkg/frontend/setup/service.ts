// Spawns one merge service for the whole test run and tears it down at the
// end.  The port is chosen by the OS and handed to tests via the
// ORTHMERGE_TEST_PORT environment variable.

import { spawn, type ChildProcess } from "node:child_process";
import net from "node:net";

let proc: ChildProcess | undefined;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const srv = net.createServer();
    srv.once("error", reject);
    srv.listen(0, "127.0.0.1", () => {
      const address = srv.address();
      if (address === null || typeof address === "string") {
        srv.close();
        reject(new Error("could not allocate a port"));
        return;
      }
      const { port } = address;
      srv.close((err) => (err ? reject(err) : resolve(port)));
    });
  });
}

async function waitHealthy(port: number, child: ChildProcess): Promise<void> {
  const deadline = Date.now() + 30_000;
  for (;;) {
    if (child.exitCode !== null) {
      throw new Error(`service exited early with code ${child.exitCode}`);
    }
    try {
      const res = await fetch(`http://127.0.0.1:${port}/health`);
      if (res.ok) return;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error("service did not become healthy within 30s");
    }
    await new Promise((r) => setTimeout(r, 200));
  }
}

export async function setup(): Promise<void> {
  const port = await freePort();
  process.env.ORTHMERGE_TEST_PORT = String(port);
  proc = spawn(
    "python3",
    ["-m", "orthmerge", "serve", "--port", String(port), "--log-level", "warning"],
    {
      stdio: ["ignore", "inherit", "inherit"],
      env: { ...process.env, ORTHMERGE_NO_JIT: "1" },
    },
  );
  await waitHealthy(port, proc);
}

export async function teardown(): Promise<void> {
  const child = proc;
  if (!child || child.exitCode !== null) return;
  const exited = new Promise<void>((resolve) => child.once("exit", () => resolve()));
  child.kill("SIGTERM");
  await Promise.race([exited, new Promise((r) => setTimeout(r, 5_000))]);
  if (child.exitCode === null) child.kill("SIGKILL");
}
