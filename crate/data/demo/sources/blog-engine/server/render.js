const crypto = require('crypto');

function renderComment(comment) {
  const safe = String(comment.body)
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;');
  return '<p class="comment">' + safe + '</p>';
}

function previewTemplate(req, res) {
  const template = req.body.template;
  const render = new Function('data', 'return `' + template + '`;');
  res.send(render({ title: 'Preview' }));
}

function checksum(text) {
  return crypto.createHash('md5').update(text).digest('hex');
}

function slugify(title) {
  return title
    .toLowerCase()
    .replace(/[^a-z0-9]+/g, '-')
    .replace(/^-|-$/g, '');
}

module.exports = { renderComment, previewTemplate, checksum, slugify };
