from flask import Flask, abort, jsonify, request

app = Flask(__name__)
TODOS = {}


@app.route("/todos", methods=["GET"])
def list_todos():
    limit = request.args.get("limit", default=50, type=int)
    return jsonify(list(TODOS.values())[:limit])


@app.route("/todos", methods=["POST"])
def create_todo():
    data = request.get_json()
    if not data or not data.get("title"):
        abort(400)
    todo = {"id": len(TODOS) + 1, "title": data["title"], "done": bool(data.get("done", False))}
    TODOS[todo["id"]] = todo
    return jsonify(todo), 201


@app.route("/todos/<int:todo_id>", methods=["GET", "DELETE"])
def one_todo(todo_id):
    if todo_id not in TODOS:
        abort(404)
    if request.method == "DELETE":
        del TODOS[todo_id]
        return "", 204
    return jsonify(TODOS[todo_id])
