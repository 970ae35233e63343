from .utils import (append_jsonl, canonical_json, digest_file, digest_payload, digest_text, fill_placeholders, iter_jsonl,
                    iter_jsonl_with_offsets, read_json, read_jsonl, save_table, write_json, write_jsonl)
