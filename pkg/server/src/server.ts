/**
 * Reference guidance server.
 *
 *   node dist/server.js --port 8787 --target template_opacity.json --log run.log
 *
 * Answers POST /guidance with the analytic target-silhouette objective;
 * port 0 picks an ephemeral port (printed on stdout as "listening on N").
 * Single request handling path, no state across requests.
 */

import { appendFileSync } from "node:fs";
import { createServer } from "node:http";
import { parseArgs } from "node:util";

import { handleGuidance } from "./app";
import { loadTarget, Target } from "./objective";

function fail(message: string): never {
  process.stderr.write(`error: ${message}\n`);
  process.exit(2);
}

export function main(): void {
  const { values } = parseArgs({
    options: {
      port: { type: "string", default: "8787" },
      target: { type: "string" },
      log: { type: "string" },
    },
  });
  const port = Number(values.port);
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    fail(`invalid port ${values.port}`);
  }
  let target: Target | null = null;
  if (values.target !== undefined) {
    try {
      target = loadTarget(values.target);
    } catch (err) {
      fail(`cannot load target: ${(err as Error).message}`);
    }
  }
  const logPath = values.log;

  const server = createServer((req, res) => {
    const reply = (status: number, body: Record<string, unknown>) => {
      const data = JSON.stringify(body);
      res.writeHead(status, {
        "Content-Type": "application/json",
        "Content-Length": Buffer.byteLength(data),
      });
      res.end(data);
    };
    if (req.method !== "POST" || req.url !== "/guidance") {
      reply(404, { error: "POST /guidance only" });
      return;
    }
    const chunks: Buffer[] = [];
    req.on("data", (chunk) => chunks.push(chunk));
    req.on("end", () => {
      let body: unknown;
      try {
        body = JSON.parse(Buffer.concat(chunks).toString("utf-8"));
      } catch {
        reply(400, { error: "body is not valid JSON" });
        return;
      }
      const result = handleGuidance(body, target);
      if (logPath !== undefined) {
        const iter = (body as Record<string, unknown>)?.iteration ?? "?";
        const loss = result.body.loss ?? "-";
        appendFileSync(logPath, `iteration=${iter} status=${result.status} loss=${loss}\n`);
      }
      reply(result.status, result.body);
    });
  });

  server.listen(port, "127.0.0.1", () => {
    const address = server.address();
    const bound = typeof address === "object" && address ? address.port : port;
    process.stdout.write(`listening on ${bound}\n`);
  });
}

if (require.main === module) {
  main();
}
