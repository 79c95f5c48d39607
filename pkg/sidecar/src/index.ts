import { pathToFileURL } from "node:url";
import { builtinHandler, type Handler } from "./heuristic.js";
import { serve } from "./server.js";

async function loadHandler(spec: string | undefined): Promise<Handler> {
  if (!spec || spec === "builtin") return builtinHandler;
  // a user module exporting { segment, clean } wraps an arbitrary model
  const mod = await import(pathToFileURL(spec).href);
  const handler: Handler = mod.default ?? mod;
  if (typeof handler.segment !== "function" || typeof handler.clean !== "function") {
    throw new Error(`handler module ${spec} must export segment() and clean()`);
  }
  return handler;
}

async function main(): Promise<number> {
  const args = process.argv.slice(2);
  let handlerSpec: string | undefined;
  for (let i = 0; i < args.length; i++) {
    if (args[i] === "--handler") handlerSpec = args[++i];
    else if (args[i] === "--help" || args[i] === "-h") {
      console.error("usage: seg-sidecar [--handler builtin|/path/to/module.js]");
      return 0;
    }
  }
  const handler = await loadHandler(handlerSpec);
  console.error("seg-sidecar ready");
  await serve(handler, process.stdin, process.stdout);
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(`seg-sidecar fatal: ${err}`);
    process.exit(1);
  },
);
