import { AnnotationApi } from "./api";
import { AnnotationApp } from "./app";

const annotator = AnnotationApp.annotatorFromQuery(document) || "anonymous";
const app = new AnnotationApp(new AnnotationApi(), document, annotator);
void app.start();
