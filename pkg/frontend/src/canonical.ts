/**
 * Canonical JSON bytes, matching the server's encoder exactly.
 *
 * The byte rules: UTF-8, no whitespace, object keys in the order the
 * builder inserted them, no NaN or infinity, and floats printed in the
 * shortest form that round-trips, switching to exponent notation only
 * below 1e-4 or at 1e16 and above, with a signed two-digit exponent
 * ("1e+16", "1e-05").  Native JSON.stringify uses different exponent
 * thresholds and drops ".0" from whole floats, so numbers are formatted
 * here by hand.
 *
 * JSON carries no int/float distinction and JS numbers carry no tag, so
 * float-valued fields must be wrapped with F() by the caller; bare
 * numbers encode as integers.
 */

/** Tags a number as a float so whole values still encode as "3.0". */
export interface FloatValue {
  readonly __float__: number;
}

export function F(value: number): FloatValue {
  return { __float__: value };
}

/** Canonical rule: negative zero encodes as 0.0. */
export function num(value: number): number {
  return value === 0 ? 0 : value;
}

export type CanonicalValue =
  | null
  | boolean
  | number
  | FloatValue
  | string
  | CanonicalValue[]
  | { [key: string]: CanonicalValue };

function isFloatValue(v: unknown): v is FloatValue {
  return typeof v === "object" && v !== null && "__float__" in (v as object);
}

/**
 * Shortest round-trip decimal form of a double, in the exact style the
 * server prints: fixed notation (always with a decimal point) while the
 * decimal exponent is in [-4, 16), exponent notation outside it.
 */
export function floatRepr(value: number): string {
  if (!Number.isFinite(value)) {
    throw new RangeError(`non-finite float ${value} has no canonical form`);
  }
  const sign = value < 0 || Object.is(value, -0) ? "-" : "";
  const abs = Math.abs(value);
  if (abs === 0) return sign + "0.0";

  // String(abs) is already the shortest round-trip form; reduce it to a
  // digit string and a decimal exponent, then re-render.
  let digits: string;
  let exp: number;
  const s = String(abs);
  const epos = s.indexOf("e");
  if (epos >= 0) {
    digits = s.slice(0, epos).replace(".", "");
    exp = Number(s.slice(epos + 1)) + (s.indexOf(".") >= 0 ? s.indexOf(".") - 1 : 0);
  } else if (s.indexOf(".") >= 0) {
    const [intPart, frac] = s.split(".");
    if (intPart !== "0") {
      digits = intPart + frac;
      exp = intPart.length - 1;
    } else {
      const lead = frac.length - frac.replace(/^0+/, "").length;
      digits = frac.slice(lead);
      exp = -lead - 1;
    }
  } else {
    digits = s;
    exp = s.length - 1;
  }
  digits = digits.replace(/0+$/, "") || "0";

  if (exp >= 16 || exp < -4) {
    const mant = digits.length > 1 ? digits[0] + "." + digits.slice(1) : digits;
    const esign = exp < 0 ? "-" : "+";
    const edig = String(Math.abs(exp)).padStart(2, "0");
    return sign + mant + "e" + esign + edig;
  }
  if (exp >= 0) {
    const intDigits = digits.padEnd(exp + 1, "0");
    const intPart = intDigits.slice(0, exp + 1);
    const frac = intDigits.slice(exp + 1);
    return sign + intPart + "." + (frac || "0");
  }
  return sign + "0." + "0".repeat(-exp - 1) + digits;
}

// The server escapes ", \, and the C0 controls, and passes everything
// else through raw (text is assumed well-formed; the server never emits
// lone surrogates).
const SHORT_ESCAPES: { [code: number]: string } = {
  0x08: "\\b",
  0x09: "\\t",
  0x0a: "\\n",
  0x0c: "\\f",
  0x0d: "\\r",
  0x22: '\\"',
  0x5c: "\\\\",
};

function encodeString(s: string, out: string[]): void {
  out.push('"');
  let plain = 0;
  for (let i = 0; i < s.length; i++) {
    const c = s.charCodeAt(i);
    if (c < 0x20 || c === 0x22 || c === 0x5c) {
      if (plain < i) out.push(s.slice(plain, i));
      out.push(SHORT_ESCAPES[c] ?? "\\u" + c.toString(16).padStart(4, "0"));
      plain = i + 1;
    }
  }
  if (plain < s.length) out.push(s.slice(plain));
  out.push('"');
}

function encodeValue(v: CanonicalValue, out: string[]): void {
  if (v === null) {
    out.push("null");
  } else if (typeof v === "boolean") {
    out.push(v ? "true" : "false");
  } else if (typeof v === "number") {
    if (!Number.isSafeInteger(v)) {
      throw new RangeError(`bare number ${v} is not a safe integer; wrap floats with F()`);
    }
    out.push(String(v));
  } else if (isFloatValue(v)) {
    out.push(floatRepr(v.__float__));
  } else if (typeof v === "string") {
    encodeString(v, out);
  } else if (Array.isArray(v)) {
    out.push("[");
    for (let i = 0; i < v.length; i++) {
      if (i > 0) out.push(",");
      encodeValue(v[i], out);
    }
    out.push("]");
  } else {
    out.push("{");
    let first = true;
    for (const key of Object.keys(v)) {
      if (!first) out.push(",");
      first = false;
      encodeString(key, out);
      out.push(":");
      encodeValue(v[key], out);
    }
    out.push("}");
  }
}

export function canonicalString(value: CanonicalValue): string {
  const out: string[] = [];
  encodeValue(value, out);
  return out.join("");
}

export function canonicalBytes(value: CanonicalValue): Uint8Array {
  return new TextEncoder().encode(canonicalString(value));
}
