/** Editable scene-graph model backing the node/edge editor.
 *
 * All validation here mirrors the server's scene schema so mistakes are
 * rejected inline before a request is ever made.
 */

import { isClassName, isPredicate } from "./vocab.js";
import type { SceneDoc, TripletDoc } from "./types.js";

export interface EditorNode {
  id: number;
  className: string;
  attributes: string[];
}

export interface EditorEdge {
  subject: number;
  predicate: string;
  object: number;
}

export class GraphValidationError extends Error {
  constructor(message: string, readonly field: string) {
    super(message);
    this.name = "GraphValidationError";
  }
}

const HEIGHT_ATTRS = new Set(["tall", "short"]);
const VOLUME_ATTRS = new Set(["large", "small"]);

export class GraphEditor {
  room = { width: 4.0, depth: 4.0, height: 2.8 };
  private nodes_ = new Map<number, EditorNode>();
  private edges_: EditorEdge[] = [];
  private nextId = 0;

  get nodes(): EditorNode[] {
    return [...this.nodes_.values()].sort((a, b) => a.id - b.id);
  }

  get edges(): EditorEdge[] {
    return [...this.edges_];
  }

  addNode(className: string, attributes: string[] = []): EditorNode {
    if (!isClassName(className)) {
      throw new GraphValidationError(`unknown class "${className}"`, "class");
    }
    const unknown = attributes.find(
      (a) => !HEIGHT_ATTRS.has(a) && !VOLUME_ATTRS.has(a),
    );
    if (unknown !== undefined) {
      throw new GraphValidationError(
        `unknown attribute "${unknown}"`, "attributes");
    }
    const heights = attributes.filter((a) => HEIGHT_ATTRS.has(a));
    const volumes = attributes.filter((a) => VOLUME_ATTRS.has(a));
    if (heights.length > 1 || volumes.length > 1) {
      throw new GraphValidationError(
        "at most one height and one volume attribute", "attributes");
    }
    const node = {
      id: this.nextId++,
      className,
      attributes: [...attributes].sort(),
    };
    this.nodes_.set(node.id, node);
    return node;
  }

  removeNode(id: number): void {
    if (!this.nodes_.delete(id)) {
      throw new GraphValidationError(`no node ${id}`, "id");
    }
    this.edges_ = this.edges_.filter(
      (e) => e.subject !== id && e.object !== id,
    );
  }

  addEdge(subject: number, predicate: string, object: number): EditorEdge {
    if (!this.nodes_.has(subject) || !this.nodes_.has(object)) {
      throw new GraphValidationError("edge endpoints must be nodes", "edge");
    }
    if (subject === object) {
      throw new GraphValidationError(
        "an object cannot relate to itself", "edge");
    }
    if (!isPredicate(predicate)) {
      throw new GraphValidationError(
        `unknown predicate "${predicate}"`, "predicate");
    }
    const dup = this.edges_.some(
      (e) => e.subject === subject && e.predicate === predicate
        && e.object === object,
    );
    if (dup) {
      throw new GraphValidationError("edge already present", "edge");
    }
    const edge = { subject, predicate, object };
    this.edges_.push(edge);
    return edge;
  }

  removeEdge(index: number): void {
    if (index < 0 || index >= this.edges_.length) {
      throw new GraphValidationError(`no edge ${index}`, "edge");
    }
    this.edges_.splice(index, 1);
  }

  /** Scene document in the wire schema; node ids are renumbered densely. */
  toScene(): SceneDoc {
    const ordered = this.nodes;
    const dense = new Map(ordered.map((n, i) => [n.id, i]));
    const triplets: TripletDoc[] = this.edges_.map((e) => [
      dense.get(e.subject)!,
      e.predicate,
      dense.get(e.object)!,
    ]);
    return {
      room: { ...this.room },
      nodes: ordered.map((n, i) => ({
        id: i,
        class: n.className,
        attributes: [...n.attributes],
      })),
      triplets,
    };
  }

  static fromScene(doc: SceneDoc): GraphEditor {
    const editor = new GraphEditor();
    editor.room = { ...doc.room };
    const ids = doc.nodes.map((n) =>
      editor.addNode(n.class, n.attributes ?? []).id,
    );
    for (const [s, p, o] of doc.triplets) {
      editor.addEdge(ids[s], p, ids[o]);
    }
    return editor;
  }
}
