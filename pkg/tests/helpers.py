"""Small document builders shared by the tests."""


def status(tid, uid=1, lat=None, lon=None, **extra):
    doc = {"id": tid, "user": {"id": uid}, "text": f"t{tid}"}
    if lat is not None:
        doc["coordinates"] = {"type": "Point", "coordinates": [lon, lat]}
    doc.update(extra)
    return doc


def deletion(tid, uid=1, key="delete"):
    return {key: {"status": {"id": tid, "user_id": uid}}}
