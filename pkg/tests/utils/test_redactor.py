from app.utils.redactor import REDACTED, SENSITIVE_KEYS, redact_dict


def test_redacts_nested_keys():
    data = {"port": 7820, "session": {"shared_key": "00ff", "peers": [{"token": "t"}]}}
    assert redact_dict(data) == {
        "port": 7820,
        "session": {"shared_key": REDACTED, "peers": [{"token": REDACTED}]},
    }


def test_key_match_is_case_insensitive():
    assert redact_dict({"PAIRSYNC_KEY_HEX": "ab"}) == {"PAIRSYNC_KEY_HEX": REDACTED}


def test_none_value_is_kept():
    assert redact_dict({"shared_key": None}) == {"shared_key": None}


def test_non_dict_input_unchanged():
    assert redact_dict("plain") == "plain"
    assert "shared_key" in SENSITIVE_KEYS
