// Ed25519 backend. In the browser, nacl.fast.min.js is loaded as a classic
// script before the app module, so globalThis.nacl exists and the dynamic
// import below is never evaluated. Under vitest/node the npm package is used.

let impl: any = (globalThis as any).nacl;
if (!impl) {
  const mod: any = await import("tweetnacl");
  impl = mod.default ?? mod;
}

export interface NaclSign {
  sign: {
    detached: ((msg: Uint8Array, secretKey: Uint8Array) => Uint8Array) & {
      verify(msg: Uint8Array, sig: Uint8Array, publicKey: Uint8Array): boolean;
    };
    keyPair: {
      fromSeed(seed: Uint8Array): { publicKey: Uint8Array; secretKey: Uint8Array };
    };
  };
}

export default impl as NaclSign;
