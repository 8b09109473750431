"""MiMC-x^3 block cipher in counter mode over a prime field.

The permutation works over q = 2^254 + 79, chosen so that q = 2 mod 3:
cubing is then a bijection on Z_q and the round function is invertible,
while q stays above the pairing scalar field so session keys embed
losslessly.  Round count is ceil(log_3 q) = 161.

Counter mode never runs the cipher backwards, so encryption and
decryption share the forward permutation.  Plaintext is processed in
31-byte chunks (every chunk value is < 2^248 < q) and the ciphertext
carries an 8-byte nonce plus an 8-byte big-endian length header.
Encryption is deterministic: the nonce is derived from key and message,
which is safe for the one-shot session keys used here but leaks
plaintext equality under key reuse.
"""

import hashlib

MIMC_PRIME = 2**254 + 79
MIMC_ROUNDS = 161

_CHUNK = 31
_BLOCK = 32


def _round_constants():
    consts = [0]
    for i in range(1, MIMC_ROUNDS):
        digest = hashlib.sha256(b"otachain.mimc.round" + i.to_bytes(4, "big")).digest()
        consts.append(int.from_bytes(digest, "big") % MIMC_PRIME)
    return consts


_CONSTANTS = _round_constants()


def mimc_permutation(x, k):
    """Encrypt one field element under key k: 161 cubing rounds plus key."""
    q = MIMC_PRIME
    x %= q
    k %= q
    for c in _CONSTANTS:
        t = (x + k + c) % q
        x = t * t % q * t % q
    return (x + k) % q


def _keystream_block(key, nonce, index):
    return mimc_permutation((nonce << 64) + index, key)


def mimc_encrypt(key, plaintext):
    """Counter-mode encryption; ciphertext = nonce(8) || length(8) || blocks."""
    key = int(key) % MIMC_PRIME
    nonce_src = hashlib.sha256(
        b"otachain.mimc.nonce"
        + key.to_bytes(32, "big")
        + len(plaintext).to_bytes(8, "big")
        + plaintext
    ).digest()
    nonce = int.from_bytes(nonce_src[:8], "big")
    out = [nonce_src[:8], len(plaintext).to_bytes(8, "big")]
    for index in range(0, len(plaintext), _CHUNK):
        chunk = plaintext[index : index + _CHUNK]
        m = int.from_bytes(chunk.ljust(_CHUNK, b"\x00"), "big")
        c = (m + _keystream_block(key, nonce, index // _CHUNK)) % MIMC_PRIME
        out.append(c.to_bytes(_BLOCK, "big"))
    return b"".join(out)


def mimc_decrypt(key, ciphertext):
    """Inverse of mimc_encrypt; raises ValueError on malformed input."""
    key = int(key) % MIMC_PRIME
    if len(ciphertext) < 16:
        raise ValueError("ciphertext shorter than header")
    nonce = int.from_bytes(ciphertext[:8], "big")
    length = int.from_bytes(ciphertext[8:16], "big")
    body = ciphertext[16:]
    blocks = -(-length // _CHUNK)
    if len(body) != blocks * _BLOCK:
        raise ValueError("ciphertext length inconsistent with header")
    out = bytearray()
    for i in range(blocks):
        c = int.from_bytes(body[i * _BLOCK : (i + 1) * _BLOCK], "big")
        m = (c - _keystream_block(key, nonce, i)) % MIMC_PRIME
        if m >> (8 * _CHUNK):
            raise ValueError("ciphertext block decodes outside the chunk range")
        out += m.to_bytes(_CHUNK, "big")
    if any(out[length:]):
        # Zero padding is enforced so no two valid ciphertexts decrypt alike.
        raise ValueError("nonzero padding in final block")
    return bytes(out[:length])
